#include <gtest/gtest.h>

#include <nfloo/cli.hpp>
#include <nfloo/nfloo.hpp>

#include <cstdlib>
#include <fstream>
#include <random>

#include "support/oracles.hpp"

using namespace nfloo;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const fs::path source_dir{NFLOO_SOURCE_DIR};
const fs::path columbus_data = source_dir / "data/columbus/columbus.csv";
const fs::path columbus_weights = source_dir / "data/columbus/columbus_weights.csv";

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::path(testing::TempDir()) / ("nfloo_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "nfloo");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

json load(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// Structure of a JSON document: object keys in order, element type of
// arrays (from the first element), and scalar kinds. Null counts as a
// number because non-finite numbers are written as null.
json schema_of(const json& j) {
  if (j.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : j.items()) out[k] = schema_of(v);
    return out;
  }
  if (j.is_array()) return json::array({j.empty() ? json("empty") : schema_of(j.front())});
  if (j.is_number() || j.is_null()) return "number";
  if (j.is_boolean()) return "boolean";
  return "string";
}

void check_golden(const json& doc, const std::string& name) {
  const fs::path golden = source_dir / "tests/golden" / (name + ".schema.json");
  const json s = schema_of(doc);
  if (std::getenv("NFLOO_UPDATE_GOLDEN")) {
    std::ofstream(golden) << s.dump(2) << '\n';
    return;
  }
  ASSERT_TRUE(fs::exists(golden)) << golden;
  EXPECT_EQ(s, load(golden)) << "schema drift in " << name << ":\n" << s.dump(2);
}

}  // namespace

TEST(Io, FormatDoubleRoundTrips) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd;
  for (int k = 0; k < 1000; ++k) {
    const double x = nd(gen) * std::pow(10.0, k % 40 - 20);
    EXPECT_EQ(*io::parse_double(io::format_double(x)), x);
  }
  EXPECT_FALSE(io::parse_double("abc"));
  EXPECT_FALSE(io::parse_double(""));
  EXPECT_EQ(*io::parse_double("+2.5"), 2.5);
}

TEST(Io, CsvRoundTrip) {
  const auto dir = fresh_dir("csv");
  const std::vector<std::vector<double>> rows{{1.0, 0.1}, {-3.5e-300, 1.0 / 3.0}};
  io::write_csv(dir / "t.csv", {"a", "b"}, rows);
  const auto t = io::read_csv(dir / "t.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(t.rows, rows);
  EXPECT_THROW(t.column("c"), validation_error);
  std::ofstream(dir / "bad.csv") << "a,b\n1,2\n3\n";
  EXPECT_THROW(io::read_csv(dir / "bad.csv"), io_error);
  std::ofstream(dir / "nan.csv") << "a\nfoo\n";
  EXPECT_THROW(io::read_csv(dir / "nan.csv"), io_error);
  EXPECT_THROW(io::read_csv(dir / "missing.csv"), io_error);
}

TEST(Io, WeightsFormats) {
  const auto dir = fresh_dir("weights");
  const SparseMatrix w = row_standardize(lattice_weights(3, 3));
  io::write_weights(dir / "w.csv", w);
  EXPECT_EQ(io::read_weights(dir / "w.csv", 9).to_dense(), w.to_dense());
  std::ofstream(dir / "noheader.csv") << "1,2,0.5\n2,1,0.25\n";
  const auto nh = io::read_weights(dir / "noheader.csv");
  EXPECT_EQ(nh.rows(), 2);
  EXPECT_EQ(nh.coeff(0, 1), 0.5);
  std::ofstream(dir / "w.mtx") << "%%MatrixMarket matrix coordinate real general\n% c\n3 3 2\n1 2 1.5\n3 1 2\n";
  const auto mm = io::read_weights(dir / "w.mtx");
  EXPECT_EQ(mm.rows(), 3);
  EXPECT_EQ(mm.coeff(0, 1), 1.5);
  EXPECT_EQ(mm.coeff(2, 0), 2.0);
  EXPECT_THROW(io::read_weights(dir / "w.mtx", 4), validation_error);
  std::ofstream(dir / "zero.csv") << "0,1,1\n";
  EXPECT_THROW(io::read_weights(dir / "zero.csv"), io_error);
}

TEST(Io, DrawsAndLoglikRoundTrip) {
  const auto dir = fresh_dir("draws");
  std::mt19937_64 gen(2);
  PosteriorDraws d;
  d.names = {"b_Intercept", "sigma", "rho"};
  d.chains = 2;
  d.values = oracles::random_matrix(gen, 6, 3);
  d.chain_ids = {1, 1, 1, 2, 2, 2};
  d.draw_ids = {1, 2, 3, 1, 2, 3};
  io::write_draws(dir / "d.csv", d);
  const auto back = io::read_draws(dir / "d.csv");
  EXPECT_EQ(back.names, d.names);
  EXPECT_EQ(back.values, d.values);
  EXPECT_EQ(back.chain_ids, d.chain_ids);
  EXPECT_EQ(back.chains, 2);

  LogLikMatrix ll;
  ll.values = oracles::random_matrix(gen, 6, 4);
  ll.chain_ids = d.chain_ids;
  ll.draw_ids = d.draw_ids;
  io::write_loglik(dir / "ll.csv", ll);
  const auto lb = io::read_loglik(dir / "ll.csv");
  EXPECT_EQ(lb.values, ll.values);
  EXPECT_EQ(io::read_csv(dir / "ll.csv").header.back(), "obs_4");
}

TEST(Io, ColumbusFixture) {
  io::DataSpec spec;
  spec.response = "CRIME";
  spec.predictors = {"INC", "HOVAL"};
  spec.row_standardize = true;
  const auto d = io::read_sar_data(columbus_data, columbus_weights, spec);
  EXPECT_EQ(d.n(), 49);
  EXPECT_EQ(d.p(), 3);
  EXPECT_EQ(d.predictor_names, (std::vector<std::string>{"Intercept", "INC", "HOVAL"}));
  EXPECT_NEAR(d.y(3), 0.178269, 1e-6);
  const Matrix w = d.w.to_dense();
  for (Eigen::Index i = 0; i < 49; ++i) EXPECT_NEAR(w.row(i).sum(), 1.0, 1e-12);
  EXPECT_GT((w - w.transpose()).norm(), 0.1);  // row standardization breaks symmetry
  spec.response = "NOPE";
  EXPECT_THROW(io::read_sar_data(columbus_data, columbus_weights, spec), validation_error);
}

TEST(Report, NonFiniteIsNullAndJsonRoundTrips) {
  EXPECT_TRUE(report::number(std::numeric_limits<double>::quiet_NaN()).is_null());
  EXPECT_TRUE(report::number(-std::numeric_limits<double>::infinity()).is_null());
  LogLikMatrix ll;
  ll.values = Matrix::Constant(200, 1, -2.5);
  for (int s = 0; s < 200; ++s) {
    ll.chain_ids.push_back(1);
    ll.draw_ids.push_back(s + 1);
  }
  const auto r = elpd_approx(ll);
  const json j = report::psis_json(r, {});
  EXPECT_NEAR(j["total_elpd"].get<double>(), -2.5, 1e-12);
  EXPECT_TRUE(j["khat"][0].is_null());  // degenerate tail sentinel
  EXPECT_EQ(json::parse(j.dump()), j);
}

TEST(Cli, SimulateRoundTrip) {
  const auto dir = fresh_dir("simulate");
  ASSERT_EQ(run_cli({"simulate", "--n", "20", "--rho", "0.6", "--seed", "1",
                 "--row-standardize", "--out", dir.string()}),
            0);
  const auto t = io::read_csv(dir / "data.csv");
  ASSERT_EQ(t.rows.size(), 20u);
  const SparseMatrix w = io::read_weights(dir / "weights.csv", 20);
  EXPECT_EQ(w.to_dense(), row_standardize(lattice_weights(4, 5)).to_dense());
  Matrix x(20, 2);
  x.col(0).setOnes();
  x.col(1) = t.column_vector(1);
  const SarData again = simulate(w, {(Vector(2) << 1.0, 2.0).finished(), 1.0, 0.6}, x, 1);
  EXPECT_EQ(again.y, t.column_vector(0));
  const json truth = load(dir / "truth.json");
  EXPECT_EQ(truth["truth"]["rho"].get<double>(), 0.6);
  check_golden(truth, "truth");
}

TEST(Cli, ZeroRhoSimulationIsMarginallyNormal) {
  const auto dir = fresh_dir("simulate0");
  ASSERT_EQ(run_cli({"simulate", "--n", "900", "--rho", "0", "--sigma", "2", "--beta", "1,-1",
                 "--seed", "4", "--out", dir.string()}),
            0);
  const auto t = io::read_csv(dir / "data.csv");
  std::vector<double> z;
  for (const auto& r : t.rows) z.push_back((r[0] - (1.0 - r[1])) / 2.0);
  std::sort(z.begin(), z.end());
  double ks = 0.0;
  const double n = static_cast<double>(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double f = 0.5 * std::erfc(-z[k] / std::sqrt(2.0));
    ks = std::max({ks, std::abs(f - k / n), std::abs(f - (k + 1) / n)});
  }
  EXPECT_LT(ks, 1.63 / std::sqrt(n));  // 1% critical value
}

TEST(Cli, InadmissibleRhoIsValidationError) {
  const auto dir = fresh_dir("badrho");
  testing::internal::CaptureStderr();
  EXPECT_EQ(run_cli({"simulate", "--rho", "1.5", "--row-standardize", "--out", dir.string()}), 2);
  EXPECT_NE(testing::internal::GetCapturedStderr().find("admissible"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "data.csv"));
}

TEST(Cli, MissingWeightsIsCleanError) {
  const auto dir = fresh_dir("noweights");
  testing::internal::CaptureStderr();
  const int rc = run_cli({"fit", "--data", columbus_data.string(), "--weights",
                      (dir / "nope.csv").string(), "--out", dir.string()});
  const std::string err = testing::internal::GetCapturedStderr();
  EXPECT_EQ(rc, 2);
  EXPECT_NE(err.find("nope.csv"), std::string::npos);
}

TEST(Cli, BadArgumentsAreValidationErrors) {
  const auto dir = fresh_dir("badargs");
  testing::internal::CaptureStderr();
  EXPECT_EQ(run_cli({"fit", "--data", columbus_data.string(), "--weights", columbus_weights.string(),
                 "--sigma-prior", "wide", "--out", dir.string()}),
            2);
  EXPECT_EQ(run_cli({"loo", "--data", columbus_data.string(), "--weights", columbus_weights.string(),
                 "--khat-ok", "0.9", "--out", dir.string()}),
            2);
  EXPECT_EQ(run_cli({"frobnicate"}), 2);
  EXPECT_EQ(run_cli({"exact-loo", "--data", columbus_data.string(), "--weights",
                 columbus_weights.string(), "--folds", "0", "--out", dir.string()}),
            2);
  testing::internal::GetCapturedStderr();
}

TEST(Cli, PipelineSchemaAndInvariants) {
  const auto dir = fresh_dir("pipeline");
  const std::string out = dir.string();
  ASSERT_EQ(run_cli({"simulate", "--n", "20", "--rho", "0.5", "--seed", "3", "--row-standardize",
                 "--out", out}),
            0);
  const std::vector<std::string> common{
      "--data", (dir / "data.csv").string(), "--weights", (dir / "weights.csv").string(),
      "--warmup", "300", "--samples", "200", "--thin", "2", "--no-gate", "--out", out};
  auto with = [&](std::vector<std::string> head) {
    head.insert(head.end(), common.begin(), common.end());
    return head;
  };
  ASSERT_EQ(run_cli(with({"fit"})), 0);
  const json fit = load(dir / "fit_summary.json");
  check_golden(fit, "fit_summary");
  ASSERT_EQ(run_cli(with({"loo", "--draws", (dir / "draws.csv").string()})), 0);
  const json loo = load(dir / "loo.json");
  check_golden(loo, "loo");
  ASSERT_EQ(run_cli(with({"exact-loo", "--folds", "1,2", "--draws", (dir / "draws.csv").string()})), 0);
  check_golden(load(dir / "exact_loo.json"), "exact_loo");
  ASSERT_EQ(run_cli(with({"compare", "--folds", "1,5,9"})), 0);
  const json cmp = load(dir / "compare.json");
  check_golden(cmp, "compare");
  EXPECT_EQ(cmp["schema_version"], 1);
  EXPECT_EQ(cmp["mode"], "compare");

  // Totals are sums of the pointwise arrays.
  double approx = 0.0;
  for (const auto& v : cmp["psis"]["elpd_pointwise"]) approx += v.get<double>();
  EXPECT_NEAR(cmp["totals"]["elpd_approx"].get<double>(), approx, 1e-12);
  double exact = 0.0, a_on = 0.0, a_ex = 0.0, e_ex = 0.0;
  std::vector<int> flagged;
  for (const auto& f : cmp["diagnostics"]["flagged"]) flagged.push_back(f.get<int>());
  for (const auto& f : cmp["exact"]["folds"]) {
    const int obs = f["obs"].get<int>();
    const double e = f["elpd_exact"].get<double>();
    const double a = cmp["psis"]["elpd_pointwise"][obs - 1].get<double>();
    exact += e;
    a_on += a;
    if (std::find(flagged.begin(), flagged.end(), obs) == flagged.end()) {
      a_ex += a;
      e_ex += e;
    }
  }
  EXPECT_NEAR(cmp["totals"]["elpd_exact"].get<double>(), exact, 1e-12);
  EXPECT_NEAR(cmp["totals"]["elpd_approx_on_exact_folds"].get<double>(), a_on, 1e-12);
  EXPECT_NEAR(cmp["totals"]["elpd_approx_excluding_flagged"].get<double>(), a_ex, 1e-12);
  EXPECT_NEAR(cmp["totals"]["elpd_exact_excluding_flagged"].get<double>(), e_ex, 1e-12);
  const auto csv = io::read_csv(dir / "compare.csv");
  EXPECT_EQ(csv.header, (std::vector<std::string>{"obs", "elpd_approx", "elpd_exact", "khat"}));
  EXPECT_EQ(csv.rows.size(), 20u);
  EXPECT_EQ(json::parse(cmp.dump()), cmp);
}

TEST(Cli, ConvergenceGateExitCode) {
  const auto dir = fresh_dir("gate");
  testing::internal::CaptureStderr();
  const int rc = run_cli({"fit", "--data", columbus_data.string(), "--weights",
                          columbus_weights.string(), "--row-standardize", "--predictors", "INC,HOVAL",
                          "--warmup", "20", "--samples", "20", "--thin", "1", "--out", dir.string()});
  const std::string err = testing::internal::GetCapturedStderr();
  EXPECT_EQ(rc, 3);
  EXPECT_NE(err.find("R-hat"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "fit_summary.json"));
}

TEST(Fit, ColumbusSigns) {
  io::DataSpec spec;
  spec.response = "CRIME";
  spec.predictors = {"INC", "HOVAL"};
  spec.row_standardize = true;
  const SarModel m(io::read_sar_data(columbus_data, columbus_weights, spec));
  SamplerConfig cfg;
  cfg.thin = 10;
  const auto r = fit_sar(m, cfg);
  const auto s = summarize(r.draws);
  auto med = [&](const std::string& n) {
    for (const auto& p : s)
      if (p.name == n) return p.median;
    throw std::runtime_error(n);
  };
  EXPECT_LT(med("b_INC"), 0.0);
  EXPECT_LT(med("b_HOVAL"), 0.0);
  EXPECT_GT(med("rho"), 0.15);
  for (const auto& p : s) EXPECT_LT(p.rhat, 1.01) << p.name;
}

TEST(Fit, FiftyPercentIntervalCalibration) {
  const SparseMatrix w = row_standardize(lattice_weights(5, 6));
  const Vector beta = (Vector(2) << 1.0, 2.0).finished();
  const SarParams truth{beta, 1.0, 0.5};
  int covered = 0, total = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    rng_stream rng(seed, 1);
    Matrix x(30, 2);
    x.col(0).setOnes();
    for (Eigen::Index i = 0; i < 30; ++i) x(i, 1) = rng.normal();
    const SarData d = simulate(w, truth, x, seed);
    PriorSpec prior;
    prior.sigma.kind = SigmaPrior::Kind::flat;
    const SarModel m(d, prior);
    SamplerConfig cfg;
    cfg.seed = seed;
    cfg.thin = 2;
    const auto s = summarize(fit_sar(m, cfg).draws);
    const std::vector<double> tv{1.0, 2.0, 1.0, 0.5};
    for (std::size_t j = 0; j < 4; ++j) {
      covered += (s[j].q25 <= tv[j] && tv[j] <= s[j].q75) ? 1 : 0;
      ++total;
    }
  }
  const double rate = double(covered) / total;
  EXPECT_GT(rate, 0.35);
  EXPECT_LT(rate, 0.65);
}
