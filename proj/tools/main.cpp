// mvcopula command-line interface: fit / predict / benchmark / simulate /
// lfi-train / lfi-posterior / calibrate. Exit codes: 0 success, 2 input
// error, 3 numerical failure. See FORMATS.md for file layouts.
#include <CLI11.hpp>

#include <mvcopula/bench.hpp>
#include <mvcopula/io.hpp>
#include <mvcopula/lfi.hpp>

#include <iostream>

namespace {

using namespace mvcopula;

void check_keys(const json& node, const std::vector<std::string>& allowed,
                const std::string& context)
{
  for (const auto& item : node.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
      throw input_error("config: unknown key '" + item.key() + "' in " + context);
  }
}

json load_config(const std::string& path)
{
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw input_error(std::string("config: malformed JSON: ") + e.what());
  }
}

std::string hash_text(const std::string& text)
{
  std::ostringstream os;
  os << std::hex << std::hash<std::string>{}(text);
  return os.str();
}

double bound_from_json(const json& node, double fallback)
{
  if (node.is_null())
    return fallback;
  if (node.is_string()) {
    const std::string s = node.get<std::string>();
    if (s == "inf" || s == "+inf")
      return std::numeric_limits<double>::infinity();
    if (s == "-inf")
      return -std::numeric_limits<double>::infinity();
    throw input_error("config: bad bound '" + s + "'");
  }
  return node.get<double>();
}

VectorXd parse_number_list(const std::string& text, const std::string& what)
{
  std::vector<double> values;
  std::istringstream in(text);
  std::string field;
  while (std::getline(in, field, ',')) {
    char* end = nullptr;
    const double v = std::strtod(field.c_str(), &end);
    if (end == field.c_str() || *end != '\0')
      throw input_error(what + ": cannot parse '" + field + "'");
    values.push_back(v);
  }
  if (values.empty())
    throw input_error(what + ": empty list");
  return Eigen::Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

//! Split a CSV table into the first p response columns and the remaining
//! covariate columns.
std::pair<MatrixXd, MatrixXd> split_responses(const CsvTable& table, int p)
{
  const int cols = static_cast<int>(table.values.cols());
  if (p < 1 || p >= cols)
    throw input_error("data: need 1 <= responses < total columns (" +
                      std::to_string(cols) + " columns found)");
  return { table.values.leftCols(p), table.values.rightCols(cols - p) };
}

struct CommonArgs {
  std::string config_path;
  std::string out = "-";
  std::uint64_t seed = 1;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_config)
{
  auto* opt = cmd->add_option("--config", args.config_path, "JSON configuration file");
  if (needs_config)
    opt->required();
  cmd->add_option("--seed", args.seed, "Random seed");
  cmd->add_option("--threads", args.threads, "Eigen thread count (0 = default)");
  cmd->add_option("--out", args.out, "Output path ('-' = stdout)");
}

void emit(const std::string& out, const std::string& content)
{
  if (out == "-")
    std::cout << content;
  else
    atomic_write_file(out, content);
}

// ---------------------------------------------------------------------------

int cmd_fit(const CommonArgs& args)
{
  const std::string config_text = read_file(args.config_path);
  const json config = load_config(args.config_path);
  check_keys(config, { "data", "responses", "prior", "correlation_factors", "basis", "vi",
                       "margins", "sidecar", "seed" },
             "fit");

  const CsvTable table = read_csv(config.at("data").get<std::string>());
  const auto [y, x] = split_responses(table, config.at("responses").get<int>());

  FitSpec spec;
  if (config.contains("basis")) {
    const json& basis = config["basis"];
    check_keys(basis, { "knots", "degree", "seed" }, "fit.basis");
    spec.basis.knot_count = basis.value("knots", 30);
    spec.basis.poly_degree = basis.value("degree", 2);
    spec.basis.seed = basis.value("seed", std::uint64_t{ 1 });
  }
  spec.prior = config.value("prior", 1) == 2 ? PriorChoice::prior2 : PriorChoice::prior1;
  spec.correlation_factors = config.value("correlation_factors", 1);
  if (config.contains("vi")) {
    const json& vi = config["vi"];
    check_keys(vi, { "iterations", "factors", "samples_per_gradient", "monitor_window" },
               "fit.vi");
    spec.vi.iterations = vi.value("iterations", spec.vi.iterations);
    spec.vi.factors = vi.value("factors", spec.vi.factors);
    spec.vi.samples_per_gradient = vi.value("samples_per_gradient", 1);
    spec.vi.monitor_window = vi.value("monitor_window", spec.vi.monitor_window);
  }
  spec.vi.seed = config.value("seed", args.seed);
  if (config.contains("margins")) {
    const json& margins = config["margins"];
    check_keys(margins, { "lower", "upper" }, "fit.margins");
    spec.margin_lower = bound_from_json(margins.value("lower", json()), spec.margin_lower);
    spec.margin_upper = bound_from_json(margins.value("upper", json()), spec.margin_upper);
  }

  FitTrace trace;
  const FittedModel model = fit_model(y, x, spec, &trace);

  const std::string out = args.out == "-" ? "model.json" : args.out;
  save_model(model, out, Provenance{ spec.vi.seed, hash_text(config_text) },
             config.value("sidecar", false));

  MatrixXd trace_values(trace.noisy_elbo.size(), 3);
  for (std::size_t i = 0; i < trace.noisy_elbo.size(); ++i) {
    trace_values(i, 0) = static_cast<double>(i + 1);
    trace_values(i, 1) = trace.noisy_elbo[i];
    trace_values(i, 2) = trace.smoothed_elbo[i];
  }
  write_csv(out + ".trace.csv", { "iteration", "noisy_elbo", "smoothed_elbo" },
            trace_values);
  std::cerr << "fit: wrote " << out << " (" << trace.wall_clock_seconds << " s)\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_predict(const CommonArgs& args, const std::string& artifact_path,
                const std::string& x_file, const std::string& at, int samples,
                bool spearman, bool mean, int density_grid)
{
  const FittedModel model = load_model(artifact_path);
  const int p = model.p();

  MatrixXd x;
  if (!at.empty()) {
    const VectorXd v = parse_number_list(at, "--at");
    x = v.transpose();
  } else if (!x_file.empty()) {
    x = read_csv(x_file).values;
  } else {
    throw input_error("predict: need --x-file or --at");
  }
  if (x.cols() != model.design.d())
    throw input_error("predict: covariate dimension mismatch (got " +
                      std::to_string(x.cols()) + ", artifact expects " +
                      std::to_string(model.design.d()) + ")");

  std::vector<std::string> header;
  MatrixXd out;

  if (spearman) {
    const MatrixXd gamma = spearman_matrix(model, x.row(0));
    for (int j = 0; j < p; ++j)
      header.push_back("y" + std::to_string(j + 1));
    out = gamma;
  } else if (samples > 0) {
    header.push_back("row");
    for (int j = 0; j < p; ++j)
      header.push_back("y" + std::to_string(j + 1));
    out.resize(x.rows() * samples, p + 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const auto batch = predictive_sample(model, x.row(i), samples,
                                           args.seed + static_cast<std::uint64_t>(i));
      out.block(i * samples, 0, samples, 1).setConstant(static_cast<double>(i));
      out.block(i * samples, 1, samples, p) = batch.samples;
    }
  } else if (density_grid > 0) {
    header = { "response", "y", "density" };
    out.resize(p * density_grid, 3);
    const auto cond = conditional_gaussian(model, x.row(0));
    for (int j = 0; j < p; ++j) {
      const double lo = model.margins[j].quantile(0.005);
      const double hi = model.margins[j].quantile(0.995);
      for (int g = 0; g < density_grid; ++g) {
        const double yv = lo + (hi - lo) * g / static_cast<double>(density_grid - 1);
        const double z = model.margins[j].to_z(yv);
        const double gy = model.margins[j].pdf(yv);
        const double density =
            gy > 0.0 ? norm_pdf((z - cond.mean(j)) / cond.scale(j)) / cond.scale(j) * gy /
                           norm_pdf(z)
                     : 0.0;
        out.row(j * density_grid + g) << static_cast<double>(j + 1), yv, density;
      }
    }
  } else {
    // default and --mean: per-row predictive means
    (void)mean;
    header.push_back("row");
    for (int j = 0; j < p; ++j)
      header.push_back("mean_y" + std::to_string(j + 1));
    out.resize(x.rows(), p + 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      out(i, 0) = static_cast<double>(i);
      for (int j = 0; j < p; ++j)
        out(i, j + 1) = marginal_mean(model, x.row(i), j);
    }
  }
  emit(args.out, to_csv(header, out));
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_benchmark(const CommonArgs& args)
{
  json config = json::object();
  if (!args.config_path.empty())
    config = load_config(args.config_path);
  check_keys(config, { "data", "responses", "folds", "models", "crps_samples", "synthetic" },
             "benchmark");

  MatrixXd y, x;
  if (config.contains("data")) {
    const CsvTable table = read_csv(config.at("data").get<std::string>());
    std::tie(y, x) = split_responses(table, config.at("responses").get<int>());
  } else {
    // bundled synthetic default: bivariate nonlinear mean surface
    json synth_cfg = config.value("synthetic", json::object());
    check_keys(synth_cfg, { "n", "rho" }, "benchmark.synthetic");
    SynthSpec synth;
    synth.n = synth_cfg.value("n", 400);
    synth.d = 2;
    synth.sigma.resize(2, 2);
    const double rho = synth_cfg.value("rho", 0.5);
    synth.sigma << 1.0, rho, rho, 1.0;
    synth.mean = { [](const VectorXd& v) { return std::sin(1.6 * v(0)) + 0.4 * v(1); },
                   [](const VectorXd& v) { return 0.8 * std::cos(1.2 * v(1)); } };
    synth.margins = { Margin::normal(0, 1), Margin::lognormal(0, 0.5) };
    synth.seed = args.seed;
    const Dataset data = synth_generate(synth);
    y = data.y;
    x = data.x;
  }

  std::vector<BenchModelSpec> specs;
  if (config.contains("models")) {
    for (const json& node : config["models"]) {
      check_keys(node, { "name", "type", "basis", "prior", "knots", "iterations", "factors" },
                 "benchmark.models[]");
      BenchModelSpec spec;
      spec.name = node.at("name").get<std::string>();
      spec.noc = node.value("type", "mvc") == "noc";
      const std::string basis = node.value("basis", "tps");
      spec.basis = basis == "linear"    ? BenchBasis::linear
                   : basis == "additive" ? BenchBasis::additive
                                         : BenchBasis::tps;
      spec.prior = node.value("prior", 1) == 2 ? PriorChoice::prior2 : PriorChoice::prior1;
      spec.knots = node.value("knots", 8);
      spec.vi.iterations = node.value("iterations", 1500);
      spec.vi.factors = node.value("factors", 4);
      specs.push_back(std::move(spec));
    }
  } else {
    BenchModelSpec tps;
    tps.name = "MVC-TPS-P1";
    tps.vi.iterations = 1500;
    tps.vi.factors = 4;
    BenchModelSpec lin = tps;
    lin.name = "MVC-lin-P1";
    lin.basis = BenchBasis::linear;
    BenchModelSpec noc;
    noc.name = "NOC";
    noc.noc = true;
    specs = { tps, lin, noc };
  }

  const int folds = config.value("folds", 10);
  const int crps_samples = config.value("crps_samples", 200);
  const ScoreTable table = kfold_cv(y, x, folds, specs, args.seed, crps_samples);
  emit(args.out, table.to_csv());
  std::cerr << "benchmark: " << table.wall_clock_seconds << " s\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct CensusSetup {
  Eigen::VectorXi n_init;
  VectorXd dt;
};

CensusSetup census_setup(const std::string& census_file, int species, int median_n,
                         double dt_years, std::uint64_t seed)
{
  CensusSetup out;
  if (!census_file.empty()) {
    const CsvTable table = read_csv(census_file);
    const int n_col = table.column("N");
    const int dt_col = table.column("dt");
    out.n_init = table.values.col(n_col).cast<int>();
    out.dt = table.values.col(dt_col);
  } else {
    out.n_init = lfi::logseries_abundances(species, median_n, seed ^ 0xabcdef01u);
    out.dt = VectorXd::Constant(species, dt_years);
  }
  return out;
}

const std::vector<std::string> kPsiHeader = { "omega", "log_sigma2", "c", "log_phi1",
                                              "log_phi2" };

int cmd_simulate(const CommonArgs& args, const std::string& census_file, int n_sims,
                 int species, int median_n, double dt_years)
{
  const CensusSetup setup = census_setup(census_file, species, median_n, dt_years, args.seed);
  const lfi::TrainingSet train =
      lfi::simulate_training(n_sims, setup.n_init, setup.dt, args.seed);

  std::vector<std::string> header = kPsiHeader;
  for (int k = 1; k <= 5; ++k)
    header.push_back("H" + std::to_string(k));
  MatrixXd out(n_sims, 10);
  out << train.psi, train.h;
  emit(args.out, to_csv(header, out));
  return 0;
}

int cmd_lfi_train(const CommonArgs& args, const std::string& census_file, int n_sims,
                  int species, int median_n, double dt_years, int iterations, int knots,
                  int vi_factors)
{
  const CensusSetup setup = census_setup(census_file, species, median_n, dt_years, args.seed);
  FitSpec spec;
  spec.basis.knot_count = knots;
  spec.basis.poly_degree = 2;
  spec.basis.seed = args.seed;
  spec.vi.iterations = iterations;
  spec.vi.factors = vi_factors;
  spec.vi.seed = args.seed;

  const FittedModel model = lfi::lfi_train(n_sims, setup.n_init, setup.dt, spec, args.seed);
  const std::string out = args.out == "-" ? "lfi_model.json" : args.out;
  save_model(model, out, Provenance{ args.seed, "lfi-train" });
  std::cerr << "lfi-train: wrote " << out << "\n";
  return 0;
}

int cmd_lfi_posterior(const CommonArgs& args, const std::string& artifact_path,
                      const std::string& h_obs_text, const std::string& census_file,
                      int samples)
{
  const FittedModel model = load_model(artifact_path);
  VectorXd h_obs;
  if (!h_obs_text.empty()) {
    h_obs = parse_number_list(h_obs_text, "--h-obs");
  } else if (!census_file.empty()) {
    const CsvTable table = read_csv(census_file);
    lfi::CensusData data;
    data.n = table.values.col(table.column("N")).cast<int>();
    data.s = table.values.col(table.column("S")).cast<int>();
    data.a = table.values.col(table.column("A")).cast<int>();
    data.dt = table.values.col(table.column("dt"));
    h_obs = lfi::summaries(data);
  } else {
    throw input_error("lfi-posterior: need --h-obs or --census-file");
  }

  const MatrixXd draws = lfi::lfi_posterior(model, h_obs, samples, args.seed);
  emit(args.out, to_csv({ "omega", "sigma2", "c", "phi1", "phi2" }, draws));
  return 0;
}

int cmd_calibrate(const CommonArgs& args, const std::string& artifact_path, int test_sims,
                  const std::string& census_file, int species, int median_n, double dt_years,
                  int posterior_samples)
{
  const FittedModel model = load_model(artifact_path);
  const CensusSetup setup = census_setup(census_file, species, median_n, dt_years, args.seed);

  // fresh prior-predictive test draws, disjoint stream from training
  const lfi::TrainingSet test =
      lfi::simulate_training(test_sims, setup.n_init, setup.dt, args.seed ^ 0x5ca1ab1eULL);

  const auto priors = lfi::hyperprior_margins();
  MatrixXd out(5, 2);
  for (int j = 0; j < 5; ++j) {
    std::vector<std::function<double(double)>> cdfs;
    for (int r = 0; r < test_sims; ++r) {
      const auto batch = predictive_sample(model, test.h.row(r), posterior_samples,
                                           args.seed + static_cast<std::uint64_t>(r));
      cdfs.push_back(empirical_cdf(batch.samples.col(j)));
    }
    out(j, 0) = static_cast<double>(j + 1);
    out(j, 1) = calibration_distance(cdfs, priors[j]);
  }
  emit(args.out, to_csv({ "parameter", "sup_distance" }, out));
  return 0;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{ "Multivariate distributional regression via implicit Gaussian copulas" };
  app.require_subcommand(1);

  CommonArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model to a CSV dataset");
  add_common(fit_cmd, fit_args, true);

  CommonArgs predict_args;
  std::string predict_artifact, predict_x_file, predict_at;
  int predict_samples = 0, predict_density_grid = 0;
  bool predict_spearman = false, predict_mean = false;
  auto* predict_cmd = app.add_subcommand("predict", "Predictive products from an artifact");
  add_common(predict_cmd, predict_args, false);
  predict_cmd->add_option("--artifact", predict_artifact, "Model artifact")->required();
  predict_cmd->add_option("--x-file", predict_x_file, "CSV of covariate rows");
  predict_cmd->add_option("--at", predict_at, "Single covariate vector v1,...,vd");
  predict_cmd->add_option("--samples", predict_samples, "Predictive samples per row");
  predict_cmd->add_flag("--spearman", predict_spearman, "Spearman matrix at the first row");
  predict_cmd->add_flag("--mean", predict_mean, "Predictive means (default)");
  predict_cmd->add_option("--density-grid", predict_density_grid,
                          "Marginal predictive density on a grid at the first row");

  CommonArgs bench_args;
  auto* bench_cmd = app.add_subcommand("benchmark", "K-fold CV score table");
  add_common(bench_cmd, bench_args, false);

  CommonArgs sim_args;
  std::string sim_census;
  int sim_n_sims = 1000, sim_species = 800, sim_median_n = 8;
  double sim_dt = 5.0;
  auto* sim_cmd = app.add_subcommand("simulate", "Prior-predictive census simulations");
  add_common(sim_cmd, sim_args, false);
  sim_cmd->add_option("--n-sims", sim_n_sims, "Number of simulations");
  sim_cmd->add_option("--species", sim_species, "Species count (synthetic abundances)");
  sim_cmd->add_option("--median-n", sim_median_n, "Median initial abundance");
  sim_cmd->add_option("--dt", sim_dt, "Census interval, years");
  sim_cmd->add_option("--census-file", sim_census, "CSV with N,dt columns");

  CommonArgs train_args;
  std::string train_census;
  int train_n_sims = 1000, train_species = 800, train_median_n = 8;
  int train_iterations = 5000, train_knots = 50, train_factors = 10;
  double train_dt = 5.0;
  auto* train_cmd = app.add_subcommand("lfi-train", "Fit the amortized posterior");
  add_common(train_cmd, train_args, false);
  train_cmd->add_option("--n-sims", train_n_sims, "Training simulations");
  train_cmd->add_option("--species", train_species, "Species count");
  train_cmd->add_option("--median-n", train_median_n, "Median initial abundance");
  train_cmd->add_option("--dt", train_dt, "Census interval, years");
  train_cmd->add_option("--census-file", train_census, "CSV with N,dt columns");
  train_cmd->add_option("--iterations", train_iterations, "VI iterations");
  train_cmd->add_option("--knots", train_knots, "Basis knots");
  train_cmd->add_option("--vi-factors", train_factors, "Variational factors");

  CommonArgs post_args;
  std::string post_artifact, post_h_obs, post_census;
  int post_samples = 1000;
  auto* post_cmd = app.add_subcommand("lfi-posterior", "Posterior draws for observed data");
  add_common(post_cmd, post_args, false);
  post_cmd->add_option("--artifact", post_artifact, "Amortized model artifact")->required();
  post_cmd->add_option("--h-obs", post_h_obs, "Observed summaries h1,...,h5");
  post_cmd->add_option("--census-file", post_census, "CSV with N,S,A,dt columns");
  post_cmd->add_option("--samples", post_samples, "Posterior draws");

  CommonArgs cal_args;
  std::string cal_artifact, cal_census;
  int cal_test_sims = 200, cal_species = 800, cal_median_n = 8, cal_samples = 200;
  double cal_dt = 5.0;
  auto* cal_cmd = app.add_subcommand("calibrate", "Marginal calibration sup-distances");
  add_common(cal_cmd, cal_args, false);
  cal_cmd->add_option("--artifact", cal_artifact, "Amortized model artifact")->required();
  cal_cmd->add_option("--test-sims", cal_test_sims, "Fresh prior-predictive test sims");
  cal_cmd->add_option("--species", cal_species, "Species count");
  cal_cmd->add_option("--median-n", cal_median_n, "Median initial abundance");
  cal_cmd->add_option("--dt", cal_dt, "Census interval, years");
  cal_cmd->add_option("--census-file", cal_census, "CSV with N,dt columns");
  cal_cmd->add_option("--posterior-samples", cal_samples, "Draws per test sim");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const auto set_threads = [](int threads) {
      if (threads > 0)
        Eigen::setNbThreads(threads);
    };
    if (fit_cmd->parsed()) {
      set_threads(fit_args.threads);
      return cmd_fit(fit_args);
    }
    if (predict_cmd->parsed()) {
      set_threads(predict_args.threads);
      return cmd_predict(predict_args, predict_artifact, predict_x_file, predict_at,
                         predict_samples, predict_spearman, predict_mean,
                         predict_density_grid);
    }
    if (bench_cmd->parsed()) {
      set_threads(bench_args.threads);
      return cmd_benchmark(bench_args);
    }
    if (sim_cmd->parsed())
      return cmd_simulate(sim_args, sim_census, sim_n_sims, sim_species, sim_median_n,
                          sim_dt);
    if (train_cmd->parsed()) {
      set_threads(train_args.threads);
      return cmd_lfi_train(train_args, train_census, train_n_sims, train_species,
                           train_median_n, train_dt, train_iterations, train_knots,
                           train_factors);
    }
    if (post_cmd->parsed())
      return cmd_lfi_posterior(post_args, post_artifact, post_h_obs, post_census,
                               post_samples);
    if (cal_cmd->parsed())
      return cmd_calibrate(cal_args, cal_artifact, cal_test_sims, cal_census, cal_species,
                           cal_median_n, cal_dt, cal_samples);
    return 2;
  } catch (const input_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const numerical_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
