#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "lnvb/model_library.hpp"

namespace lnvb {

/// Columns of a data file. A covariate named "intercept" that is absent from
/// the file is a column of ones.
struct DataSchema {
  std::string response = "y";
  std::vector<std::string> covariates;
  /// Per latent component: column holding the node of each row ("" = row r
  /// hits node r).
  std::vector<std::string> index_columns;
  /// Per latent component: column of linear-predictor weights ("" = 1).
  std::vector<std::string> weight_columns;
  /// Value of the first node in index columns (0 or 1).
  int index_base = 0;
};

/// Observations with the file's column names. Missing responses (empty, NA,
/// NaN, null) are NaN in obs.y: excluded from fitting, kept for prediction.
struct DataBundle {
  Observations obs;
  std::vector<std::string> covariate_names;
  DataSchema schema;
};

/// Reads a UTF-8 CSV with a header row (.csv) or a JSON object of columns
/// (.json). Throws ValidationError naming the offending columns or rows.
DataBundle ingest_data(const std::filesystem::path& path, const DataSchema& schema);
DataBundle parse_data_csv(const std::string& text, const DataSchema& schema);
DataBundle parse_data_json(const std::string& text, const DataSchema& schema);

/// Writes the bundle as CSV under its schema's column names (round trip with
/// ingest_data).
void write_data_csv(const std::filesystem::path& path, const DataBundle& data);

/// A model file: the model, the data schema and the latent sizes.
struct ModelFile {
  ModelSpec model;
  DataSchema schema;
};

/// Parses a JSON model description; relative edge-list files resolve against
/// base_dir. Throws ValidationError or ModelError.
ModelFile parse_model_json(const std::string& text, const std::filesystem::path& base_dir = {});
ModelFile load_model(const std::filesystem::path& path);

/// Reads a two-column CSV edge list (header optional).
std::vector<std::pair<Eigen::Index, Eigen::Index>> read_edge_list(const std::filesystem::path& path, int index_base = 0);

/// Whole file as a string; throws ValidationError when unreadable.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace lnvb
