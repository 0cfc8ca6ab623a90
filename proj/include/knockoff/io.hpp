#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "knockoff/common.hpp"
#include "knockoff/model.hpp"
#include "knockoff/trainer.hpp"

namespace knockoff {

using json = nlohmann::json;

namespace detail {
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace detail

/// Writes a matrix as comma-separated text with a one-line header. Values are
/// printed with 17 significant digits, so a round trip is bit-exact.
inline void write_matrix_csv(const std::filesystem::path& path,
                             const Matrix& m,
                             std::vector<std::string> column_names = {}) {
  if (column_names.empty()) {
    for (int j = 0; j < m.cols(); ++j)
      column_names.push_back("x" + std::to_string(j + 1));
  }
  require(static_cast<int>(column_names.size()) == m.cols(),
          "write_matrix_csv: header width mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t j = 0; j < column_names.size(); ++j)
    out << (j ? "," : "") << column_names[j];
  out << "\n";
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j)
      out << (j ? "," : "") << detail::format_double(m(i, j));
    out << "\n";
  }
}

struct CsvMatrix {
  Matrix values;
  std::vector<std::string> column_names;
};

inline CsvMatrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty csv: " + path.string());
  CsvMatrix out;
  {
    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) out.column_names.push_back(cell);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      // strtod instead of stod: subnormals must parse, not throw.
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str())
        throw std::runtime_error("bad numeric cell in " + path.string());
      row.push_back(v);
    }
    if (row.size() != out.column_names.size())
      throw std::runtime_error("ragged csv row in " + path.string());
    rows.push_back(std::move(row));
  }
  out.values.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(out.column_names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rows[i][j];
  return out;
}

inline void write_vector_csv(const std::filesystem::path& path,
                             const Vector& v, const std::string& name = "y") {
  write_matrix_csv(path, Matrix(v), {name});
}

inline Vector read_vector_csv(const std::filesystem::path& path) {
  const CsvMatrix m = read_matrix_csv(path);
  require(m.values.cols() == 1, "read_vector_csv: expected one column");
  return m.values.col(0);
}

// ---- network checkpoints ----

inline void to_json(json& j, const KnockoffNetConfig& cfg) {
  j = json{{"num_heads", cfg.num_heads},
           {"num_layers", cfg.num_layers},
           {"hidden_dim", cfg.hidden_dim},
           {"dropout", cfg.dropout},
           {"mlp_ratio", cfg.mlp_ratio}};
}

inline void from_json(const json& j, KnockoffNetConfig& cfg) {
  cfg.num_heads = j.value("num_heads", cfg.num_heads);
  cfg.num_layers = j.value("num_layers", cfg.num_layers);
  cfg.hidden_dim = j.value("hidden_dim", cfg.hidden_dim);
  cfg.dropout = j.value("dropout", cfg.dropout);
  cfg.mlp_ratio = j.value("mlp_ratio", cfg.mlp_ratio);
}

constexpr int kCheckpointVersion = 1;

/// Named-array archive with a version tag and the originating configuration.
inline void save_checkpoint(const std::filesystem::path& path,
                            const KnockoffNet& net) {
  json j;
  j["format"] = "knockoff-checkpoint";
  j["version"] = kCheckpointVersion;
  j["p"] = net.input_dim();
  j["net_config"] = net.config();
  json arrays = json::array();
  const auto& names = net.parameter_names();
  const auto& params = net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    json entry;
    entry["name"] = names[k];
    entry["rows"] = params[k].rows();
    entry["cols"] = params[k].cols();
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(params[k].size()));
    for (int r = 0; r < params[k].rows(); ++r)
      for (int c = 0; c < params[k].cols(); ++c) data.push_back(params[k](r, c));
    entry["data"] = data;
    arrays.push_back(std::move(entry));
  }
  j["arrays"] = std::move(arrays);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump();
}

inline KnockoffNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  json j;
  in >> j;
  require(j.value("format", "") == std::string("knockoff-checkpoint"),
          "load_checkpoint: not a checkpoint file");
  require(j.value("version", -1) == kCheckpointVersion,
          "load_checkpoint: unsupported version");
  const int p = j.at("p").get<int>();
  const KnockoffNetConfig cfg = j.at("net_config").get<KnockoffNetConfig>();
  KnockoffNet net(p, cfg, 0);
  const auto& names = net.parameter_names();
  auto& params = net.parameters();
  const json& arrays = j.at("arrays");
  require(arrays.size() == params.size(),
          "load_checkpoint: parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const json& entry = arrays[k];
    require(entry.at("name").get<std::string>() == names[k],
            "load_checkpoint: parameter name mismatch");
    const int rows = entry.at("rows").get<int>();
    const int cols = entry.at("cols").get<int>();
    require(rows == params[k].rows() && cols == params[k].cols(),
            "load_checkpoint: parameter shape mismatch");
    const std::vector<double> data =
        entry.at("data").get<std::vector<double>>();
    require(static_cast<int>(data.size()) == rows * cols,
            "load_checkpoint: data size mismatch");
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        params[k](r, c) = data[static_cast<std::size_t>(r * cols + c)];
  }
  return net;
}

// ---- training log ----

inline void write_training_log_csv(const std::filesystem::path& path,
                                   const TrainingLog& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::size_t k =
      log.rows.empty() ? 0 : log.rows.front().train.swd_per_swapper.size();
  out << "epoch,seconds";
  for (const char* side : {"train", "val"}) {
    out << "," << side << "_total," << side << "_swd_mean," << side << "_rex,"
        << side << "_decor," << side << "_drl";
    for (std::size_t i = 0; i < k; ++i)
      out << "," << side << "_swd_" << (i + 1);
  }
  out << "\n";
  for (const EpochRow& row : log.rows) {
    out << row.epoch << "," << detail::format_double(row.seconds);
    for (const LossBreakdown* bd : {&row.train, &row.val}) {
      out << "," << detail::format_double(bd->total) << ","
          << detail::format_double(bd->swd_mean()) << ","
          << detail::format_double(bd->rex) << ","
          << detail::format_double(bd->swapper_decor) << ","
          << detail::format_double(bd->drl);
      for (double v : bd->swd_per_swapper)
        out << "," << detail::format_double(v);
    }
    out << "\n";
  }
}

}  // namespace knockoff
