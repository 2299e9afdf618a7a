#pragma once

// JSON payloads. Keys are emitted in insertion order; non-finite numbers
// (the −∞ and NaN khat sentinels) are written as null.

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "nfloo/exact_loo.hpp"
#include "nfloo/fit.hpp"
#include "nfloo/io.hpp"
#include "nfloo/psis.hpp"

namespace nfloo::report {

using json = nlohmann::ordered_json;

inline constexpr int schema_version = 1;
inline constexpr const char* tool_name = "nfloo";
inline constexpr const char* tool_version = "0.1.0";

inline json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline json numbers(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

inline json header(const std::string& mode) {
  return json{{"schema_version", schema_version},
              {"tool", tool_name},
              {"tool_version", tool_version},
              {"mode", mode}};
}

inline json psis_json(const PsisResult& r, const KhatThresholds& th) {
  json cat = json::array();
  json tail = json::array();
  json counts{{"good", 0}, {"ok", 0}, {"bad", 0}, {"unknown", 0}};
  for (Eigen::Index i = 0; i < r.khat.size(); ++i) {
    const char* c = to_string(th.classify(r.khat(i)));
    cat.push_back(c);
    counts[c] = counts[c].get<int>() + 1;
    tail.push_back(r.tail_len[static_cast<std::size_t>(i)]);
  }
  return json{{"khat", numbers(r.khat)},
              {"khat_category", cat},
              {"khat_counts", counts},
              {"elpd_pointwise", numbers(r.elpd_pointwise)},
              {"mcse", numbers(r.mcse_elpd)},
              {"n_eff", numbers(r.n_eff)},
              {"tail_len", tail},
              {"total_elpd", number(r.total())}};
}

inline json fold_json(const FoldResult& f) {
  json j{{"obs", f.i + 1}, {"failed", f.failed}};
  if (f.failed) {
    j["message"] = f.message;
    return j;
  }
  const auto& d = f.diagnostics;
  json acc = json::array();
  for (double a : d.acceptance) acc.push_back(number(a));
  j["elpd_exact"] = number(f.elpd_exact);
  j["mcse"] = number(f.mcse);
  j["max_rhat"] = number(d.max_rhat);
  j["rhat_y_mis"] = number(d.rhat_y_mis);
  j["min_ess_bulk"] = number(d.min_ess_bulk);
  j["converged"] = d.converged;
  j["acceptance"] = acc;
  return j;
}

inline json exact_json(const ExactLooReport& r) {
  json folds = json::array();
  for (const auto& f : r.folds) folds.push_back(fold_json(f));
  return json{{"folds", folds},
              {"failed_folds", r.failed_count()},
              {"total_elpd", number(r.total())}};
}

inline json summary_json(const std::vector<ParamSummary>& s) {
  json a = json::array();
  for (const auto& p : s)
    a.push_back(json{{"name", p.name},
                     {"mean", number(p.mean)},
                     {"sd", number(p.sd)},
                     {"median", number(p.median)},
                     {"q25", number(p.q25)},
                     {"q75", number(p.q75)},
                     {"rhat", number(p.rhat)},
                     {"ess_bulk", number(p.ess_bulk)}});
  return a;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  auto out = io::open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw io_error("write failed for '" + path.string() + "'");
}

}  // namespace nfloo::report
