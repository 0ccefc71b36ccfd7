#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "idda/datasets.hpp"
#include "idda/model.hpp"

namespace idda {

namespace detail {

inline void write_feature_rows(std::ostream& os, const char* domain, const Tensor<float>& f,
                               const std::vector<long>& labels) {
  const std::size_t d = f.row_size();
  char buf[32];
  for (std::size_t i = 0; i < f.rows(); ++i) {
    os << domain << ',' << labels[i];
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(f[i * d + j]));
      os << buf;
    }
    os << '\n';
  }
}

}  // namespace detail

/// Writes one CSV row per sample: domain tag, label, then the D feature values.
/// No header row. Target labels are the hidden labels when `with_target_labels`
/// is set and available, else -1.
inline void export_features(const IddaModel<float>& model, const LabeledSet& source, const UnlabeledSet& target,
                            const std::filesystem::path& path, bool with_target_labels = false) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("export_features: cannot write " + path.string());
  if (source.size() > 0) {
    const auto fs = extract_features(model, source.x);
    std::vector<long> ls(source.labels.begin(), source.labels.end());
    detail::write_feature_rows(out, "source", fs, ls);
  }
  if (target.size() > 0) {
    const auto ft = extract_features(model, target.x);
    std::vector<long> lt(target.size(), -1);
    if (with_target_labels && target.hidden_labels) lt.assign(target.hidden_labels->begin(), target.hidden_labels->end());
    detail::write_feature_rows(out, "target", ft, lt);
  }
  if (!out) throw Error("export_features: write failure on " + path.string());
}

/// Analysis report document: {metric, value, config, seeds}.
inline nlohmann::json make_report(const std::string& metric, nlohmann::json value, nlohmann::json config,
                                  const std::vector<std::uint64_t>& seeds) {
  return nlohmann::json{{"metric", metric}, {"value", std::move(value)}, {"config", std::move(config)}, {"seeds", seeds}};
}

}  // namespace idda
