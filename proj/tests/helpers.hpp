#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "stagdid/panel.hpp"

namespace testutil {

// Balanced panel with the given cohort labels (stagdid::kNever for controls)
// and an outcome function of (unit index, period 1..T).
inline stagdid::PanelDataset make_panel(
    const std::vector<int>& cohorts, int T,
    const std::function<double(int, int)>& outcome) {
  stagdid::PanelDataset ds;
  const int n = static_cast<int>(cohorts.size());
  for (int j = 0; j < n; ++j) ds.units.push_back("u" + std::to_string(j + 1));
  for (int t = 1; t <= T; ++t) ds.times.push_back(t);
  ds.outcome.resize(n, T);
  for (int j = 0; j < n; ++j)
    for (int t = 1; t <= T; ++t) ds.outcome(j, t - 1) = outcome(j, t);
  ds.cohort = cohorts;
  ds.covariates_static.resize(n, 0);
  ds.validate();
  return ds;
}

inline void add_static_covariate(stagdid::PanelDataset& ds, const std::string& name,
                                 const std::vector<double>& values) {
  Eigen::MatrixXd m(ds.n_units(), ds.covariates_static.cols() + 1);
  m.leftCols(ds.covariates_static.cols()) = ds.covariates_static;
  for (int j = 0; j < ds.n_units(); ++j) m(j, m.cols() - 1) = values[j];
  ds.covariates_static = m;
  ds.static_names.push_back(name);
}

// Scratch directory under the system temp root, unique per tag.
inline std::string temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("stagdid_test_" + tag);
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline std::string write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path;
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testutil
