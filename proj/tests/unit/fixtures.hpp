#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "drbayes/drbayes.hpp"

namespace fixtures {

inline drbayes::Dataset make_dataset(std::vector<double> y, std::vector<double> a,
                                     const std::vector<std::vector<double>>& rows) {
  drbayes::Dataset d;
  const auto n = static_cast<Eigen::Index>(y.size());
  d.y = Eigen::Map<drbayes::Vector>(y.data(), n);
  d.a = Eigen::Map<drbayes::Vector>(a.data(), n);
  const auto p = rows.empty() ? Eigen::Index{0} : static_cast<Eigen::Index>(rows.front().size());
  d.x.resize(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) d.x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  for (Eigen::Index j = 0; j < p; ++j) d.column_names.push_back("x" + std::to_string(j + 1));
  return d;
}

/// Scratch file under the system temp dir, removed on destruction.
class TempFile {
 public:
  explicit TempFile(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("drbayes_test_" + name)) {}
  TempFile(const TempFile&) = delete;
  TempFile& operator=(const TempFile&) = delete;
  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }

  void write(const std::string& text) const {
    std::ofstream out(path_);
    out << text;
  }

 private:
  std::filesystem::path path_;
};

inline drbayes::OutcomeModelSpec linear_outcome(const drbayes::Dataset& d) {
  drbayes::OutcomeModelSpec spec;
  spec.design = drbayes::Design::all(d);
  return spec;
}

inline drbayes::PropensityModelSpec logistic_ps(const drbayes::Dataset& d) {
  drbayes::PropensityModelSpec spec;
  spec.design = drbayes::Design::all(d);
  return spec;
}

}  // namespace fixtures
