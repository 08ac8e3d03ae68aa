#include "lnvb/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"
#include "lnvb/error.hpp"

namespace lnvb {

namespace {

using nlohmann::json;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) {
    return "";
  }
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// RFC 4180 style: quoted fields, doubled quotes, CRLF tolerated.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    if (ch == '"') {
      quoted = true;
      any = true;
    } else if (ch == ',') {
      row.push_back(trim(field));
      field.clear();
      any = true;
    } else if (ch == '\n') {
      if (any || !field.empty()) {
        row.push_back(trim(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else if (ch != '\r') {
      field += ch;
      any = true;
    }
  }
  if (quoted) {
    throw ValidationError("CSV ends inside a quoted field");
  }
  if (any || !field.empty()) {
    row.push_back(trim(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null"; }

bool parse_number(const std::string& s, double& out) {
  if (is_missing(s)) {
    out = kNaN;
    return true;
  }
  try {
    std::size_t pos = 0;
    out = std::stod(s, &pos);
    return pos == s.size() && std::isfinite(out);
  } catch (const std::exception&) {
    return false;
  }
}

std::string format_double(double v) {
  if (std::isnan(v)) {
    return "NA";
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    out += (out.empty() ? "" : ", ") + s;
  }
  return out;
}

// Columns by name; entries are NaN where missing.
using Columns = std::map<std::string, std::vector<double>>;

DataBundle build_bundle(const Columns& cols, std::size_t rows, const DataSchema& schema) {
  std::vector<std::string> missing;
  auto require = [&](const std::string& name) {
    if (!name.empty() && cols.find(name) == cols.end()) {
      missing.push_back(name);
    }
  };
  require(schema.response);
  for (const auto& c : schema.covariates) {
    if (c != "intercept") {
      require(c);
    }
  }
  for (const auto& c : schema.index_columns) {
    require(c);
  }
  for (const auto& c : schema.weight_columns) {
    require(c);
  }
  if (!missing.empty()) {
    throw ValidationError("data file lacks declared columns: " + join(missing));
  }
  if (schema.index_base != 0 && schema.index_base != 1) {
    throw ValidationError("index base must be 0 or 1");
  }
  DataBundle out;
  out.schema = schema;
  out.covariate_names = schema.covariates;
  const auto n = static_cast<Eigen::Index>(rows);
  out.obs.y = Eigen::Map<const Eigen::VectorXd>(cols.at(schema.response).data(), n);
  out.obs.covariates.resize(n, static_cast<Eigen::Index>(schema.covariates.size()));
  std::vector<std::string> bad;
  for (std::size_t j = 0; j < schema.covariates.size(); ++j) {
    const auto& name = schema.covariates[j];
    const auto it = cols.find(name);
    for (std::size_t r = 0; r < rows; ++r) {
      const double v = it == cols.end() ? 1.0 : it->second[r];
      if (std::isnan(v)) {
        bad.push_back(name + " row " + std::to_string(r + 1));
      }
      out.obs.covariates(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
    }
  }
  const std::size_t nc = std::max<std::size_t>(1, schema.index_columns.size());
  out.obs.index.assign(nc, std::vector<Eigen::Index>(rows, -1));
  for (std::size_t c = 0; c < nc; ++c) {
    const std::string name = c < schema.index_columns.size() ? schema.index_columns[c] : "";
    for (std::size_t r = 0; r < rows; ++r) {
      if (name.empty()) {
        out.obs.index[c][r] = static_cast<Eigen::Index>(r);
        continue;
      }
      const double v = cols.at(name)[r];
      if (std::isnan(v)) {
        continue;  // row does not involve this component
      }
      if (v != std::floor(v) || v < schema.index_base) {
        bad.push_back(name + " row " + std::to_string(r + 1));
        continue;
      }
      out.obs.index[c][r] = static_cast<Eigen::Index>(v) - schema.index_base;
    }
  }
  if (!schema.weight_columns.empty()) {
    out.obs.weight.assign(nc, {});
    for (std::size_t c = 0; c < schema.weight_columns.size() && c < nc; ++c) {
      const auto& name = schema.weight_columns[c];
      if (name.empty()) {
        continue;
      }
      out.obs.weight[c] = cols.at(name);
      for (std::size_t r = 0; r < rows; ++r) {
        if (std::isnan(out.obs.weight[c][r]) && out.obs.index[c][r] >= 0) {
          bad.push_back(name + " row " + std::to_string(r + 1));
        }
      }
    }
  }
  if (!bad.empty()) {
    if (bad.size() > 20) {
      bad.resize(20);
      bad.emplace_back("...");
    }
    throw ValidationError("invalid or missing values in: " + join(bad));
  }
  return out;
}

PrecisionSpec parse_precision(const json& j, PrecisionSpec def) {
  if (j.is_null()) {
    return def;
  }
  if (j.is_number()) {
    def.fixed = true;
    def.value = j.get<double>();
    return def;
  }
  def.fixed = j.value("fixed", def.fixed);
  def.value = j.value("value", def.value);
  def.shape = j.value("shape", def.shape);
  def.rate = j.value("rate", def.rate);
  if (!(def.shape > 0.0) || !(def.rate > 0.0) || !(def.value > 0.0)) {
    throw ValidationError("precision prior needs positive shape, rate and value");
  }
  return def;
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> parse_edges(const json& comp, const std::filesystem::path& base,
                                                               int index_base) {
  if (comp.contains("edges_file")) {
    std::filesystem::path p = comp.at("edges_file").get<std::string>();
    if (p.is_relative()) {
      p = base / p;
    }
    return read_edge_list(p, index_base);
  }
  std::vector<std::pair<Eigen::Index, Eigen::Index>> edges;
  for (const auto& e : comp.at("edges")) {
    if (!e.is_array() || e.size() != 2) {
      throw ValidationError("edges must be pairs of node indices");
    }
    edges.emplace_back(e[0].get<Eigen::Index>() - index_base, e[1].get<Eigen::Index>() - index_base);
  }
  return edges;
}

LatentComponent parse_component(const json& j, const std::filesystem::path& base, int index_base) {
  const std::string type_name = j.at("type").get<std::string>();
  const ComponentType type = parse_component_type(type_name);
  auto size = [&] {
    if (!j.contains("size")) {
      throw ValidationError("component of type " + type_name + " needs a size");
    }
    return j.at("size").get<Eigen::Index>();
  };
  RhoSpec rho;
  if (j.contains("rho")) {
    const json& r = j.at("rho");
    if (r.is_number()) {
      rho.value = r.get<double>();
    } else {
      rho.fixed = r.value("fixed", true);
      rho.value = r.value("value", 0.0);
      rho.prior_mean = r.value("prior_mean", 0.0);
      rho.prior_sd = r.value("prior_sd", 1.0);
    }
  }
  LatentComponent c;
  switch (type) {
    case ComponentType::kAr1:
      c = build_ar1(size(), rho.value);
      break;
    case ComponentType::kRw1:
      c = build_rw1(size());
      break;
    case ComponentType::kRw2:
      c = build_rw2(size());
      break;
    case ComponentType::kIid:
      c = build_iid(size());
      break;
    case ComponentType::kSar: {
      const auto edges = parse_edges(j, base, index_base);
      c = build_sar(adjacency_from_edges(edges, size()), rho.value);
      break;
    }
    case ComponentType::kIcar:
      c = build_icar(parse_edges(j, base, index_base), size());
      break;
    case ComponentType::kArP:
      c = build_ar_p(size(), j.at("phi").get<std::vector<double>>());
      break;
    case ComponentType::kCustom: {
      const json& d = j.at("d");
      std::vector<Eigen::Triplet<double>> t;
      for (const auto& e : d.at("triplets")) {
        t.emplace_back(e.at(0).get<Eigen::Index>(), e.at(1).get<Eigen::Index>(), e.at(2).get<double>());
      }
      SparseMatrix m(d.at("rows").get<Eigen::Index>(), d.at("cols").get<Eigen::Index>());
      m.setFromTriplets(t.begin(), t.end());
      c = build_custom(m, std::vector<double>(static_cast<std::size_t>(m.rows()), 1.0));
      break;
    }
  }
  if (c.has_rho()) {
    c.rho = rho;
  } else if (j.contains("rho")) {
    throw ValidationError("component type " + type_name + " has no correlation parameter");
  }
  c.name = j.value("name", c.name);
  if (j.contains("h")) {
    c.h = j.at("h").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(c.h.size()) != c.rows()) {
      throw ValidationError("component " + c.name + ": h has " + std::to_string(c.h.size()) + " entries, D has " +
                            std::to_string(c.rows()) + " rows");
    }
  }
  if (j.contains("noise")) {
    const json& nz = j.at("noise");
    if (nz.is_string()) {
      c.noise.kind = parse_noise_kind(nz.get<std::string>());
    } else {
      c.noise.kind = parse_noise_kind(nz.value("family", std::string("nig")));
      c.noise.alpha_eta = nz.value("alpha_eta", c.noise.alpha_eta);
    }
    if (!(c.noise.alpha_eta > 0.0)) {
      throw ValidationError("component " + c.name + ": alpha_eta must be positive");
    }
  }
  c.precision = parse_precision(j.contains("precision") ? j.at("precision") : json(), c.precision);
  c.sum_to_zero = j.value("sum_to_zero", c.sum_to_zero);
  return c;
}

Columns columns_from_json(const json& j, std::size_t& rows) {
  if (!j.is_object()) {
    throw ValidationError("JSON data must be an object of equally long columns");
  }
  Columns cols;
  rows = 0;
  bool first = true;
  for (const auto& [name, values] : j.items()) {
    if (!values.is_array()) {
      throw ValidationError("JSON data column '" + name + "' is not an array");
    }
    if (!first && values.size() != rows) {
      throw ValidationError("JSON data column '" + name + "' has " + std::to_string(values.size()) + " rows, expected " +
                            std::to_string(rows));
    }
    rows = values.size();
    first = false;
    std::vector<double> col;
    col.reserve(values.size());
    for (std::size_t r = 0; r < values.size(); ++r) {
      const auto& v = values[r];
      if (v.is_null()) {
        col.push_back(kNaN);
      } else if (v.is_number()) {
        col.push_back(v.get<double>());
      } else {
        throw ValidationError("JSON data column '" + name + "' row " + std::to_string(r + 1) + " is not a number");
      }
    }
    cols.emplace(name, std::move(col));
  }
  return cols;
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError("cannot read file " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ValidationError("cannot write file " + path.string());
  }
  out << text;
}

DataBundle parse_data_csv(const std::string& text, const DataSchema& schema) {
  auto table = parse_csv(text);
  if (table.empty()) {
    throw ValidationError("data file is empty");
  }
  const auto header = table.front();
  Columns cols;
  for (const auto& name : header) {
    if (name.empty() || cols.count(name) > 0) {
      throw ValidationError("data header has an empty or duplicated column name '" + name + "'");
    }
    cols[name] = {};
  }
  std::vector<std::string> bad;
  for (std::size_t r = 1; r < table.size(); ++r) {
    const auto& row = table[r];
    if (row.size() != header.size()) {
      bad.push_back("row " + std::to_string(r) + " has " + std::to_string(row.size()) + " fields");
      continue;
    }
    for (std::size_t j = 0; j < header.size(); ++j) {
      double v = kNaN;
      if (!parse_number(row[j], v)) {
        bad.push_back(header[j] + " row " + std::to_string(r) + " ('" + row[j] + "')");
      }
      cols[header[j]].push_back(v);
    }
  }
  if (!bad.empty()) {
    if (bad.size() > 20) {
      bad.resize(20);
      bad.emplace_back("...");
    }
    throw ValidationError("malformed data: " + join(bad));
  }
  return build_bundle(cols, table.size() - 1, schema);
}

DataBundle parse_data_json(const std::string& text, const DataSchema& schema) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed JSON data: ") + e.what());
  }
  std::size_t rows = 0;
  const Columns cols = columns_from_json(j, rows);
  return build_bundle(cols, rows, schema);
}

DataBundle ingest_data(const std::filesystem::path& path, const DataSchema& schema) {
  const std::string text = read_text_file(path);
  if (path.extension() == ".json") {
    return parse_data_json(text, schema);
  }
  return parse_data_csv(text, schema);
}

void write_data_csv(const std::filesystem::path& path, const DataBundle& data) {
  const DataSchema& s = data.schema;
  std::vector<std::string> header{s.response};
  std::vector<std::size_t> cov_cols;
  for (std::size_t j = 0; j < data.covariate_names.size(); ++j) {
    if (data.covariate_names[j] != "intercept") {
      header.push_back(data.covariate_names[j]);
      cov_cols.push_back(j);
    }
  }
  for (const auto& c : s.index_columns) {
    if (!c.empty()) header.push_back(c);
  }
  for (const auto& c : s.weight_columns) {
    if (!c.empty()) header.push_back(c);
  }
  std::ostringstream out;
  for (std::size_t j = 0; j < header.size(); ++j) {
    out << (j ? "," : "") << header[j];
  }
  out << '\n';
  const Observations& o = data.obs;
  for (Eigen::Index r = 0; r < o.rows(); ++r) {
    out << format_double(o.y[r]);
    for (auto j : cov_cols) {
      out << ',' << format_double(o.covariates(r, static_cast<Eigen::Index>(j)));
    }
    for (std::size_t c = 0; c < s.index_columns.size(); ++c) {
      if (s.index_columns[c].empty()) continue;
      const auto node = o.index[c][static_cast<std::size_t>(r)];
      out << ',' << (node < 0 ? std::string("NA") : std::to_string(node + s.index_base));
    }
    for (std::size_t c = 0; c < s.weight_columns.size(); ++c) {
      if (s.weight_columns[c].empty()) continue;
      out << ',' << format_double(o.weight_of(c, r));
    }
    out << '\n';
  }
  write_text_file(path, out.str());
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> read_edge_list(const std::filesystem::path& path, int index_base) {
  const auto table = parse_csv(read_text_file(path));
  std::vector<std::pair<Eigen::Index, Eigen::Index>> edges;
  for (std::size_t r = 0; r < table.size(); ++r) {
    const auto& row = table[r];
    double a = 0.0;
    double b = 0.0;
    const bool numeric = row.size() == 2 && parse_number(row[0], a) && parse_number(row[1], b) && !std::isnan(a) &&
                         !std::isnan(b);
    if (!numeric) {
      if (r == 0) {
        continue;  // header
      }
      throw ValidationError("edge list " + path.string() + " row " + std::to_string(r + 1) + " is not a node pair");
    }
    edges.emplace_back(static_cast<Eigen::Index>(a) - index_base, static_cast<Eigen::Index>(b) - index_base);
  }
  return edges;
}

ModelFile parse_model_json(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed model JSON: ") + e.what());
  }
  try {
    ModelFile out;
    ModelSpec& m = out.model;
    m.likelihood = parse_likelihood(j.value("likelihood", std::string("gaussian")));
    PrecisionSpec obs_default;
    m.obs_precision = parse_precision(j.contains("observation_precision") ? j.at("observation_precision") : json(),
                                      obs_default);
    m.fixed_effects_precision = j.value("fixed_effects_precision", m.fixed_effects_precision);
    DataSchema& s = out.schema;
    if (j.contains("data")) {
      const json& d = j.at("data");
      s.response = d.value("response", s.response);
      s.covariates = d.value("covariates", std::vector<std::string>{});
      s.index_base = d.value("index_base", 0);
    }
    m.fixed_effect_names = s.covariates;
    for (const auto& cj : j.at("components")) {
      m.components.push_back(parse_component(cj, base_dir, s.index_base));
      s.index_columns.push_back(cj.value("index", std::string()));
      s.weight_columns.push_back(cj.value("weight", std::string()));
    }
    bool any_weight = false;
    for (const auto& w : s.weight_columns) {
      any_weight = any_weight || !w.empty();
    }
    if (!any_weight) {
      s.weight_columns.clear();
    }
    if (m.components.size() > 1) {
      for (std::size_t c = 0; c < m.components.size(); ++c) {
        if (s.index_columns[c].empty() && c > 0) {
          throw ValidationError("component " + m.components[c].name +
                                " needs an index column when the model has several components");
        }
      }
    }
    bool identity = true;
    for (const auto& col : s.index_columns) {
      identity = identity && col.empty();
    }
    if (identity) {
      s.index_columns.clear();
    }
    return out;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid model description: ") + e.what());
  }
}

ModelFile load_model(const std::filesystem::path& path) {
  return parse_model_json(read_text_file(path), path.parent_path());
}

}  // namespace lnvb
