#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "nfloo/errors.hpp"

namespace nfloo {

/// S×P table of posterior draws on the constrained scale.
///
/// Rows are ordered chain-major. `chain_ids` and `draw_ids` are 1-based, the
/// latter counting retained draws within a chain.
struct PosteriorDraws {
  std::vector<std::string> names;
  Eigen::MatrixXd values;
  std::vector<int> chain_ids;
  std::vector<int> draw_ids;
  int chains = 0;
  std::uint64_t seed = 0;

  Eigen::Index s() const noexcept { return values.rows(); }
  Eigen::Index p() const noexcept { return values.cols(); }

  Eigen::Index column(const std::string& name) const {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == name) return static_cast<Eigen::Index>(j);
    throw validation_error("draws have no column named '" + name + "'");
  }

  // Draws of one parameter, split by chain.
  std::vector<std::vector<double>> by_chain(Eigen::Index param) const {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(chains));
    for (Eigen::Index s = 0; s < values.rows(); ++s)
      out[static_cast<std::size_t>(chain_ids[s] - 1)].push_back(
          values(s, param));
    return out;
  }

  void validate() const {
    if (static_cast<Eigen::Index>(names.size()) != values.cols())
      throw validation_error("draws: name count does not match columns");
    if (std::set<std::string>(names.begin(), names.end()).size() !=
        names.size())
      throw validation_error("draws: parameter names must be unique");
    if (static_cast<Eigen::Index>(chain_ids.size()) != values.rows() ||
        static_cast<Eigen::Index>(draw_ids.size()) != values.rows())
      throw validation_error("draws: index columns do not match row count");
    if (values.rows() < 1) throw validation_error("draws: no draws");
    if (!values.allFinite())
      throw validation_error("draws: non-finite parameter value");
    for (int c : chain_ids)
      if (c < 1 || c > chains)
        throw validation_error("draws: chain id out of range");
  }
};

}  // namespace nfloo
