#pragma once

// Command-line front end: simulate, fit, loo, exact-loo, compare.
//
// Exit codes: 0 success, 2 validation error, 3 convergence gate failure,
// 4 numerical failure.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nfloo/exact_loo.hpp"
#include "nfloo/fit.hpp"
#include "nfloo/io.hpp"
#include "nfloo/psis.hpp"
#include "nfloo/report.hpp"
#include "nfloo/sar_model.hpp"

namespace nfloo::cli {

enum exit_code : int { ok = 0, validation = 2, convergence = 3, numerical = 4 };

struct RunConfig {
  std::string subcommand;
  std::filesystem::path data;
  std::filesystem::path weights;
  std::filesystem::path draws;
  std::filesystem::path out = ".";
  std::uint64_t seed = 1;
  int chains = 4;
  int warmup = 1000;
  int samples = 1000;
  int thin = 20;
  std::string beta_prior = "flat";
  std::string sigma_prior = "half-normal";
  std::string rho_prior = "uniform";
  bool row_standardize = false;
  std::string response;
  std::vector<std::string> predictors;
  bool no_intercept = false;
  std::string folds = "all";
  double khat_ok = 0.5;
  double khat_bad = 0.7;
  std::size_t jobs = default_jobs();
  bool no_gate = false;
  double rhat_max = 1.01;
  double max_failed_fraction = 0.01;
  bool timings = false;
  // simulate
  int n = 20;
  double rho = 0.6;
  double sigma = 1.0;
  std::vector<double> beta{1.0, 2.0};

  KhatThresholds thresholds() const {
    KhatThresholds t{khat_ok, khat_bad};
    t.validate();
    return t;
  }

  SamplerConfig sampler() const {
    SamplerConfig s;
    s.chains = chains;
    s.warmup = warmup;
    s.retained = samples;
    s.thin = thin;
    s.seed = seed;
    s.jobs = jobs;
    s.validate();
    return s;
  }
};

namespace detail {

inline std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const auto& cell : io::split_csv_line(s)) {
    const auto v = io::parse_double(cell);
    if (!v) throw validation_error("bad number '" + cell + "' in " + what);
    out.push_back(*v);
  }
  return out;
}

// "kind" or "kind:a,b".
inline std::pair<std::string, std::vector<double>> parse_prior(const std::string& s,
                                                               const std::string& what) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) return {s, {}};
  return {s.substr(0, colon), parse_list(s.substr(colon + 1), what)};
}

inline PriorSpec prior_from(const RunConfig& cfg) {
  PriorSpec p;
  {
    auto [kind, a] = parse_prior(cfg.beta_prior, "--beta-prior");
    if (kind == "flat" && a.empty()) {
      p.beta.kind = BetaPrior::Kind::flat;
    } else if (kind == "normal" && a.size() == 2 && a[1] > 0.0) {
      p.beta = {BetaPrior::Kind::normal, a[0], a[1]};
    } else {
      throw validation_error("--beta-prior must be 'flat' or 'normal:MEAN,SD'");
    }
  }
  {
    auto [kind, a] = parse_prior(cfg.sigma_prior, "--sigma-prior");
    if (a.size() > 1 || (a.size() == 1 && !(a[0] > 0.0)))
      throw validation_error("--sigma-prior scale must be a single positive number");
    const double scale = a.empty() ? 0.0 : a[0];
    if (kind == "half-normal")
      p.sigma = {SigmaPrior::Kind::half_normal, scale};
    else if (kind == "half-cauchy")
      p.sigma = {SigmaPrior::Kind::half_cauchy, scale};
    else if (kind == "flat" && a.empty())
      p.sigma = {SigmaPrior::Kind::flat, 1.0};
    else
      throw validation_error(
          "--sigma-prior must be 'half-normal[:SCALE]', 'half-cauchy[:SCALE]' or 'flat'");
  }
  {
    auto [kind, a] = parse_prior(cfg.rho_prior, "--rho-prior");
    if (kind != "uniform" || !(a.empty() || (a.size() == 2 && a[0] < a[1])))
      throw validation_error("--rho-prior must be 'uniform' or 'uniform:LO,HI'");
    if (a.size() == 2) p.rho = {a[0], a[1]};
  }
  return p;
}

inline SarModel load_model(const RunConfig& cfg) {
  if (cfg.data.empty()) throw validation_error("--data is required");
  if (cfg.weights.empty()) throw validation_error("--weights is required");
  io::DataSpec spec;
  spec.response = cfg.response;
  spec.predictors = cfg.predictors;
  spec.intercept = !cfg.no_intercept;
  spec.row_standardize = cfg.row_standardize;
  return SarModel(io::read_sar_data(cfg.data, cfg.weights, spec), prior_from(cfg));
}

inline report::json config_json(const RunConfig& cfg) {
  report::json preds = report::json::array();
  for (const auto& p : cfg.predictors) preds.push_back(p);
  return report::json{{"data", cfg.data.string()},
                      {"weights", cfg.weights.string()},
                      {"draws", cfg.draws.string()},
                      {"seed", cfg.seed},
                      {"chains", cfg.chains},
                      {"warmup", cfg.warmup},
                      {"samples", cfg.samples},
                      {"thin", cfg.thin},
                      {"beta_prior", cfg.beta_prior},
                      {"sigma_prior", cfg.sigma_prior},
                      {"rho_prior", cfg.rho_prior},
                      {"row_standardize", cfg.row_standardize},
                      {"response", cfg.response},
                      {"predictors", preds},
                      {"intercept", !cfg.no_intercept},
                      {"folds", cfg.folds},
                      {"khat_ok", cfg.khat_ok},
                      {"khat_bad", cfg.khat_bad},
                      {"gate", !cfg.no_gate},
                      {"rhat_max", cfg.rhat_max}};
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

inline void add_timing(report::json& j, const RunConfig& cfg, const Timer& t) {
  if (cfg.timings) j["timings"] = report::json{{"wall_seconds", t.seconds()}};
}

struct GateResult {
  double max_rhat = std::numeric_limits<double>::quiet_NaN();
  bool evaluated = false;
  bool passed = true;
};

inline GateResult gate(const std::vector<ParamSummary>& s, const RunConfig& cfg) {
  GateResult g;
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& p : s) {
    if (std::isnan(p.rhat)) return g;
    m = std::max(m, p.rhat);
  }
  g.evaluated = true;
  g.max_rhat = m;
  g.passed = m < cfg.rhat_max;
  return g;
}

struct FitOutput {
  McmcResult result;
  std::vector<ParamSummary> summary;
  GateResult gate;
};

inline FitOutput do_fit(const SarModel& model, const RunConfig& cfg) {
  FitOutput f{fit_sar(model, cfg.sampler()), {}, {}};
  f.summary = summarize(f.result.draws);
  f.gate = gate(f.summary, cfg);
  return f;
}

inline report::json fit_json(const FitOutput& f, const SarModel& model) {
  report::json acc = report::json::array();
  for (const auto& c : f.result.chains) acc.push_back(report::number(c.acceptance_rate));
  return report::json{
      {"parameters", report::summary_json(f.summary)},
      {"acceptance", acc},
      {"rho_interval", {report::number(model.admissible().lo), report::number(model.admissible().hi)}},
      {"gate", {{"evaluated", f.gate.evaluated},
                {"max_rhat", report::number(f.gate.max_rhat)},
                {"passed", f.gate.passed}}}};
}

// Draws from --draws, or a fresh fit when none are given. The second member
// is set when the gate failed on a fresh fit.
inline std::pair<PosteriorDraws, bool> obtain_draws(const SarModel& model,
                                                    const RunConfig& cfg) {
  if (!cfg.draws.empty()) return {io::read_draws(cfg.draws), false};
  FitOutput f = do_fit(model, cfg);
  io::write_draws(cfg.out / "draws.csv", f.result.draws);
  if (!f.gate.passed && !cfg.no_gate)
    std::cerr << "convergence gate failed: max R-hat " << f.gate.max_rhat << " >= "
              << cfg.rhat_max << " (use --no-gate to override)\n";
  return {std::move(f.result.draws), !f.gate.passed};
}

struct ApproxOutput {
  LogLikMatrix loglik;
  PsisResult psis;
  bool too_many_failures = false;
};

inline ApproxOutput do_approx(const SarModel& model, const PosteriorDraws& draws,
                              const RunConfig& cfg) {
  ApproxOutput a;
  a.loglik = build_loglik_matrix(model, draws,
                                 {cfg.jobs, DrawFailurePolicy::record});
  const double frac = static_cast<double>(a.loglik.failed.size()) /
                      static_cast<double>(draws.s());
  a.too_many_failures = frac > cfg.max_failed_fraction;
  if (a.too_many_failures)
    std::cerr << a.loglik.failed.size() << " of " << draws.s()
              << " draws could not be factorized (limit " << cfg.max_failed_fraction
              << " of draws)\n";
  if (a.loglik.s() < 1) throw error("every posterior draw failed");
  a.psis = elpd_approx(a.loglik, cfg.jobs);
  return a;
}

inline void write_khat_csv(const std::filesystem::path& path, const PsisResult& r) {
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < r.khat.size(); ++i)
    rows.push_back({double(i + 1), r.khat(i), r.elpd_pointwise(i), r.mcse_elpd(i),
                    r.n_eff(i), double(r.tail_len[static_cast<std::size_t>(i)])});
  io::write_csv(path, {"obs", "khat", "elpd_loo", "mcse", "n_eff", "tail_len"}, rows);
}

inline std::vector<Eigen::Index> flagged(const PsisResult& r, const KhatThresholds& th) {
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < r.khat.size(); ++i)
    if (th.classify(r.khat(i)) == KhatCategory::bad) out.push_back(i);
  return out;
}

inline report::json one_based(const std::vector<Eigen::Index>& v) {
  report::json a = report::json::array();
  for (auto i : v) a.push_back(i + 1);
  return a;
}

// Parses --folds: "all", "flagged" or a list of 1-based indices.
inline std::vector<Eigen::Index> parse_folds(const std::string& spec, Eigen::Index n,
                                             const std::optional<PsisResult>& psis,
                                             const KhatThresholds& th) {
  std::vector<Eigen::Index> out;
  if (spec == "all") {
    for (Eigen::Index i = 0; i < n; ++i) out.push_back(i);
  } else if (spec == "flagged") {
    if (!psis) throw validation_error("--folds flagged needs posterior draws");
    out = flagged(*psis, th);
  } else {
    for (double v : parse_list(spec, "--folds")) {
      if (v != std::floor(v) || v < 1 || v > double(n))
        throw validation_error("--folds entries must be integers in 1.." + std::to_string(n));
      out.push_back(static_cast<Eigen::Index>(v) - 1);
    }
  }
  return out;
}

inline ExactLooOptions exact_options(const RunConfig& cfg, std::vector<Eigen::Index> folds,
                                     const SarModel& model,
                                     const std::optional<PosteriorDraws>& draws) {
  ExactLooOptions opt;
  opt.jobs = cfg.jobs;
  opt.rhat_threshold = cfg.rhat_max;
  opt.folds = std::move(folds);
  if (draws) {
    const Vector m = loo_predictive_means(model, *draws, model.data().y);
    opt.y_mis_init.assign(m.data(), m.data() + m.size());
  }
  return opt;
}

inline int exact_status(const ExactLooReport& r, const RunConfig& cfg) {
  if (r.failed_count() > 0) {
    for (const auto& f : r.folds)
      if (f.failed) std::cerr << f.message << "\n";
    return numerical;
  }
  if (cfg.no_gate) return ok;
  int status = ok;
  for (const auto& f : r.folds)
    if (!f.diagnostics.converged) {
      std::cerr << "convergence gate failed for fold " << f.i + 1 << ": max R-hat "
                << f.diagnostics.max_rhat << " >= " << cfg.rhat_max << "\n";
      status = convergence;
    }
  if (status != ok) std::cerr << "(use --no-gate to override)\n";
  return status;
}

}  // namespace detail

inline int cmd_simulate(const RunConfig& cfg) {
  detail::Timer timer;
  if (cfg.n < 2) throw validation_error("--n must be at least 2");
  if (cfg.beta.empty()) throw validation_error("--beta needs at least one value");
  const auto n = static_cast<Eigen::Index>(cfg.n);
  SparseMatrix w;
  if (!cfg.weights.empty()) {
    w = io::read_weights(cfg.weights, n);
  } else {
    Eigen::Index rows = 1;
    for (Eigen::Index r = 1; r * r <= n; ++r)
      if (n % r == 0) rows = r;
    w = lattice_weights(rows, n / rows);
  }
  if (cfg.row_standardize) w = row_standardize(w);

  const auto p = static_cast<Eigen::Index>(cfg.beta.size());
  Matrix x(n, p);
  x.col(0).setOnes();
  rng_stream rng(cfg.seed, 1);
  for (Eigen::Index j = 1; j < p; ++j)
    for (Eigen::Index i = 0; i < n; ++i) x(i, j) = rng.normal();
  SarParams params{Eigen::Map<const Vector>(cfg.beta.data(), p), cfg.sigma, cfg.rho};
  const SarData d = simulate(w, params, x, cfg.seed);

  std::vector<std::string> header{"y"};
  for (Eigen::Index j = 1; j < p; ++j) header.push_back("x" + std::to_string(j));
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> r{d.y(i)};
    for (Eigen::Index j = 1; j < p; ++j) r.push_back(x(i, j));
    rows.push_back(std::move(r));
  }
  io::write_csv(cfg.out / "data.csv", header, rows);
  io::write_weights(cfg.out / "weights.csv", d.w);

  auto j = report::header("simulate");
  j["truth"] = {{"beta", cfg.beta}, {"sigma", cfg.sigma}, {"rho", cfg.rho}};
  j["n"] = cfg.n;
  j["seed"] = cfg.seed;
  j["row_standardize"] = cfg.row_standardize;
  detail::add_timing(j, cfg, timer);
  report::write_json(cfg.out / "truth.json", j);
  return ok;
}

inline int cmd_fit(const RunConfig& cfg) {
  detail::Timer timer;
  const SarModel model = detail::load_model(cfg);
  const auto f = detail::do_fit(model, cfg);
  io::write_draws(cfg.out / "draws.csv", f.result.draws);
  auto j = report::header("fit");
  j["config"] = detail::config_json(cfg);
  j.update(detail::fit_json(f, model));
  detail::add_timing(j, cfg, timer);
  report::write_json(cfg.out / "fit_summary.json", j);
  if (!f.gate.passed && !cfg.no_gate) {
    std::cerr << "convergence gate failed: max R-hat " << f.gate.max_rhat
              << " >= " << cfg.rhat_max << " (use --no-gate to override)\n";
    return convergence;
  }
  return ok;
}

inline int cmd_loo(const RunConfig& cfg) {
  detail::Timer timer;
  const SarModel model = detail::load_model(cfg);
  const auto th = cfg.thresholds();
  auto [draws, gate_failed] = detail::obtain_draws(model, cfg);
  const auto a = detail::do_approx(model, draws, cfg);
  io::write_loglik(cfg.out / "loglik.csv", a.loglik);
  detail::write_khat_csv(cfg.out / "khat.csv", a.psis);

  auto j = report::header("approx");
  j["config"] = detail::config_json(cfg);
  j["totals"] = {{"elpd_approx", report::number(a.psis.total())}};
  j["psis"] = report::psis_json(a.psis, th);
  j["diagnostics"] = {{"flagged", detail::one_based(detail::flagged(a.psis, th))},
                      {"draws", draws.s()},
                      {"failed_draws", a.loglik.failed.size()}};
  detail::add_timing(j, cfg, timer);
  report::write_json(cfg.out / "loo.json", j);
  if (a.too_many_failures) return numerical;
  if (gate_failed && !cfg.no_gate) return convergence;
  return ok;
}

inline int cmd_exact_loo(const RunConfig& cfg) {
  detail::Timer timer;
  const SarModel model = detail::load_model(cfg);
  const auto th = cfg.thresholds();
  std::optional<PosteriorDraws> draws;
  std::optional<PsisResult> psis;
  if (!cfg.draws.empty()) {
    draws = io::read_draws(cfg.draws);
    if (cfg.folds == "flagged") psis = detail::do_approx(model, *draws, cfg).psis;
  }
  auto folds = detail::parse_folds(cfg.folds, model.n_obs(), psis, th);
  const auto rep = run_all(model, cfg.sampler(),
                           detail::exact_options(cfg, folds, model, draws));

  std::vector<std::vector<double>> rows;
  for (const auto& f : rep.folds)
    rows.push_back({double(f.i + 1), f.failed ? NAN : f.elpd_exact, f.failed ? NAN : f.mcse,
                    f.failed ? NAN : f.diagnostics.max_rhat});
  io::write_csv(cfg.out / "exact_loo.csv", {"obs", "elpd_exact", "mcse", "max_rhat"}, rows);

  auto j = report::header("exact");
  j["config"] = detail::config_json(cfg);
  j["totals"] = {{"elpd_exact", report::number(rep.total())}};
  j["exact"] = report::exact_json(rep);
  detail::add_timing(j, cfg, timer);
  report::write_json(cfg.out / "exact_loo.json", j);
  return detail::exact_status(rep, cfg);
}

inline int cmd_compare(const RunConfig& cfg) {
  detail::Timer timer;
  const SarModel model = detail::load_model(cfg);
  const auto th = cfg.thresholds();
  auto [draws, gate_failed] = detail::obtain_draws(model, cfg);
  const auto a = detail::do_approx(model, draws, cfg);
  io::write_loglik(cfg.out / "loglik.csv", a.loglik);
  detail::write_khat_csv(cfg.out / "khat.csv", a.psis);

  const auto flagged = detail::flagged(a.psis, th);
  auto folds = detail::parse_folds(cfg.folds, model.n_obs(), a.psis, th);
  const auto rep = run_all(model, cfg.sampler(),
                           detail::exact_options(cfg, folds, model, draws));

  const Eigen::Index n = model.n_obs();
  Vector exact = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
  for (const auto& f : rep.folds)
    if (!f.failed) exact(f.i) = f.elpd_exact;

  // y_mis draws against the analytic LOO predictive pooled over the fold's
  // own parameter draws. Full-data draws would be the wrong reference for
  // influential observations.
  report::json checks = report::json::array();
  for (const auto& f : rep.folds) {
    if (f.failed) continue;
    const auto c = predictive_check(f);
    checks.push_back({{"obs", f.i + 1},
                      {"mean_y_mis", report::number(c.mean_draws)},
                      {"sd_y_mis", report::number(c.sd_draws)},
                      {"mean_loo", report::number(c.mean_mixture)},
                      {"sd_loo", report::number(c.sd_mixture)},
                      {"z_mean", report::number(c.z_mean)},
                      {"z_sd", report::number(c.z_sd)},
                      {"passed", c.passed()}});
  }

  std::vector<std::vector<double>> rows;
  double approx_on_folds = 0.0, approx_excl = 0.0, exact_excl = 0.0, combined = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    rows.push_back({double(i + 1), a.psis.elpd_pointwise(i), exact(i), a.psis.khat(i)});
    const bool is_flagged = std::find(flagged.begin(), flagged.end(), i) != flagged.end();
    const bool has_exact = std::isfinite(exact(i));
    combined += (is_flagged && has_exact) ? exact(i) : a.psis.elpd_pointwise(i);
    if (!has_exact) continue;
    approx_on_folds += a.psis.elpd_pointwise(i);
    if (!is_flagged) {
      approx_excl += a.psis.elpd_pointwise(i);
      exact_excl += exact(i);
    }
  }
  io::write_csv(cfg.out / "compare.csv", {"obs", "elpd_approx", "elpd_exact", "khat"}, rows);

  auto j = report::header("compare");
  j["config"] = detail::config_json(cfg);
  j["totals"] = {{"elpd_approx", report::number(a.psis.total())},
                 {"elpd_exact", report::number(rep.total())},
                 {"elpd_approx_on_exact_folds", report::number(approx_on_folds)},
                 {"elpd_approx_excluding_flagged", report::number(approx_excl)},
                 {"elpd_exact_excluding_flagged", report::number(exact_excl)},
                 {"elpd_approx_with_exact_for_flagged", report::number(combined)}};
  j["psis"] = report::psis_json(a.psis, th);
  j["exact"] = report::exact_json(rep);
  j["diagnostics"] = {{"flagged", detail::one_based(flagged)},
                      {"draws", draws.s()},
                      {"failed_draws", a.loglik.failed.size()},
                      {"predictive_checks", checks}};
  detail::add_timing(j, cfg, timer);
  report::write_json(cfg.out / "compare.json", j);

  if (a.too_many_failures) return numerical;
  const int st = detail::exact_status(rep, cfg);
  if (st != ok) return st;
  if (gate_failed && !cfg.no_gate) return convergence;
  return ok;
}

inline int dispatch(const RunConfig& cfg) {
  try {
    std::filesystem::create_directories(cfg.out);
    if (cfg.subcommand == "simulate") return cmd_simulate(cfg);
    if (cfg.subcommand == "fit") return cmd_fit(cfg);
    if (cfg.subcommand == "loo") return cmd_loo(cfg);
    if (cfg.subcommand == "exact-loo") return cmd_exact_loo(cfg);
    if (cfg.subcommand == "compare") return cmd_compare(cfg);
    throw validation_error("unknown subcommand '" + cfg.subcommand + "'");
  } catch (const validation_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return validation;
  } catch (const io_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return validation;
  } catch (const dimension_mismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return validation;
  } catch (const error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return numerical;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return validation;
  }
}

inline int run(int argc, char** argv) {
  CLI::App app{"Approximate and exact leave-one-out cross-validation for "
               "non-factorizable normal models (lagged SAR)"};
  app.require_subcommand(1);
  app.fallthrough();
  RunConfig cfg;
  std::string predictors;
  std::string beta;

  app.add_option("--data", cfg.data, "Data CSV with named columns");
  app.add_option("--weights", cfg.weights, "Weights (.mtx or row,col,value CSV, 1-based)");
  app.add_option("--draws", cfg.draws, "Posterior draws CSV (chain,draw,<params>)");
  app.add_option("--out", cfg.out, "Output directory")->capture_default_str();
  app.add_option("--seed", cfg.seed, "RNG seed")->capture_default_str();
  app.add_option("--chains", cfg.chains)->capture_default_str();
  app.add_option("--warmup", cfg.warmup)->capture_default_str();
  app.add_option("--samples", cfg.samples, "Retained draws per chain")->capture_default_str();
  app.add_option("--thin", cfg.thin, "Keep every k-th post-warmup iteration")->capture_default_str();
  app.add_option("--beta-prior", cfg.beta_prior, "flat | normal:MEAN,SD")->capture_default_str();
  app.add_option("--sigma-prior", cfg.sigma_prior,
                 "half-normal[:SCALE] | half-cauchy[:SCALE] | flat (default scale 5*sd(y))")
      ->capture_default_str();
  app.add_option("--rho-prior", cfg.rho_prior, "uniform | uniform:LO,HI")->capture_default_str();
  app.add_flag("--row-standardize", cfg.row_standardize, "Row-standardize the weights");
  app.add_option("--response", cfg.response, "Response column (default: first)");
  app.add_option("--predictors", predictors, "Comma-separated predictor columns");
  app.add_flag("--no-intercept", cfg.no_intercept);
  app.add_option("--folds", cfg.folds, "all | flagged | comma-separated 1-based indices")
      ->capture_default_str();
  app.add_option("--khat-ok", cfg.khat_ok, "khat above this is at best 'ok'")->capture_default_str();
  app.add_option("--khat-bad", cfg.khat_bad, "khat above this is 'bad'")->capture_default_str();
  app.add_option("--jobs", cfg.jobs, "Worker threads")->capture_default_str();
  app.add_flag("--no-gate", cfg.no_gate, "Do not fail on max R-hat >= --rhat-max");
  app.add_option("--rhat-max", cfg.rhat_max)->capture_default_str();
  app.add_option("--max-failed-fraction", cfg.max_failed_fraction,
                 "Tolerated fraction of draws with a non-factorizable covariance")
      ->capture_default_str();
  app.add_flag("--timings", cfg.timings, "Include wall-clock timings in JSON output");

  auto* sim = app.add_subcommand("simulate", "Simulate SAR data on a lattice or given weights");
  sim->add_option("--n", cfg.n)->capture_default_str();
  sim->add_option("--rho", cfg.rho)->capture_default_str();
  sim->add_option("--sigma", cfg.sigma)->capture_default_str();
  sim->add_option("--beta", beta, "Comma-separated coefficients, intercept first");
  app.add_subcommand("fit", "Fit the SAR model by adaptive Metropolis");
  app.add_subcommand("loo", "Approximate LOO (PSIS) from posterior draws");
  app.add_subcommand("exact-loo", "Exact LOO by refitting with y_i as a parameter");
  app.add_subcommand("compare", "Approximate vs exact LOO");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? ok : validation;
  }
  cfg.subcommand = app.get_subcommands().front()->get_name();
  try {
    if (!predictors.empty())
      for (const auto& p : io::split_csv_line(predictors)) cfg.predictors.push_back(p);
    if (!beta.empty()) cfg.beta = detail::parse_list(beta, "--beta");
  } catch (const validation_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return validation;
  }
  return dispatch(cfg);
}

}  // namespace nfloo::cli
