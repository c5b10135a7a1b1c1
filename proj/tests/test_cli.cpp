#include <catch2/catch_amalgamated.hpp>

#include <mvcopula/bench.hpp>
#include <mvcopula/io.hpp>

#include <cstdlib>
#include <filesystem>

namespace {

std::string g_binary;
std::filesystem::path g_dir;

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run(const std::string& arguments)
{
  const std::string out_path = (g_dir / "stdout.txt").string();
  const std::string err_path = (g_dir / "stderr.txt").string();
  const std::string cmd =
      g_binary + " " + arguments + " > " + out_path + " 2> " + err_path;
  const int status = std::system(cmd.c_str());
  RunResult result;
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.out = mvcopula::read_file(out_path);
  result.err = mvcopula::read_file(err_path);
  return result;
}

std::string path_of(const std::string& name) { return (g_dir / name).string(); }

void write_training_csv(const std::string& path, int n, std::uint64_t seed)
{
  using namespace mvcopula;
  SynthSpec spec;
  spec.n = n;
  spec.d = 2;
  spec.sigma.resize(2, 2);
  spec.sigma << 1.0, 0.5, 0.5, 1.0;
  spec.mean = { [](const VectorXd& x) { return std::sin(x(0)); },
                [](const VectorXd& x) { return 0.5 * x(1); } };
  spec.margins = { Margin::normal(0, 1), Margin::normal(1, 2) };
  spec.seed = seed;
  const Dataset data = synth_generate(spec);
  MatrixXd all(n, 4);
  all << data.y, data.x;
  write_csv(path, { "y1", "y2", "x1", "x2" }, all);
}

void write_fit_config(const std::string& path, const std::string& data_path)
{
  mvcopula::atomic_write_file(
      path, std::string("{\"data\": \"") + data_path +
                "\", \"responses\": 2, \"prior\": 1,"
                " \"basis\": {\"knots\": 4, \"degree\": 2, \"seed\": 1},"
                " \"vi\": {\"iterations\": 250, \"factors\": 3}, \"seed\": 9}\n");
}

}  // namespace

TEST_CASE("fit writes a deterministic artifact and a trace")
{
  write_training_csv(path_of("train.csv"), 160, 5);
  write_fit_config(path_of("fit.json"), path_of("train.csv"));

  const auto first = run("fit --config " + path_of("fit.json") + " --out " +
                         path_of("model.json"));
  INFO(first.err);
  REQUIRE(first.code == 0);
  REQUIRE(std::filesystem::exists(path_of("model.json")));
  REQUIRE(std::filesystem::exists(path_of("model.json.trace.csv")));
  const auto trace = mvcopula::read_csv(path_of("model.json.trace.csv"));
  REQUIRE(trace.values.rows() == 250);

  const auto second = run("fit --config " + path_of("fit.json") + " --out " +
                          path_of("model2.json"));
  REQUIRE(second.code == 0);
  REQUIRE(mvcopula::read_file(path_of("model.json")) ==
          mvcopula::read_file(path_of("model2.json")));
}

TEST_CASE("fit rejects bad input with exit code 2")
{
  // responses exceed the column count
  mvcopula::atomic_write_file(path_of("narrow.csv"), "a,b\n1,2\n3,4\n");
  mvcopula::atomic_write_file(path_of("bad_fit.json"),
                              "{\"data\": \"" + path_of("narrow.csv") +
                                  "\", \"responses\": 5}\n");
  REQUIRE(run("fit --config " + path_of("bad_fit.json")).code == 2);

  // malformed CSV cell
  mvcopula::atomic_write_file(path_of("mangled.csv"), "y1,y2,x1\n1,zap,3\n");
  mvcopula::atomic_write_file(path_of("mangled_fit.json"),
                              "{\"data\": \"" + path_of("mangled.csv") +
                                  "\", \"responses\": 2}\n");
  const auto res = run("fit --config " + path_of("mangled_fit.json"));
  REQUIRE(res.code == 2);
  REQUIRE(res.err.find("row") != std::string::npos);  // diagnostics name the cell

  // unknown config keys are rejected
  mvcopula::atomic_write_file(path_of("unknown.json"),
                              "{\"data\": \"x.csv\", \"responses\": 2, \"typo\": 1}\n");
  REQUIRE(run("fit --config " + path_of("unknown.json")).code == 2);
}

TEST_CASE("predict products")
{
  // artifact from the previous fit
  REQUIRE(std::filesystem::exists(path_of("model.json")));

  auto samples = run("predict --artifact " + path_of("model.json") +
                     " --at 0.5,-0.5 --samples 1000 --seed 3");
  REQUIRE(samples.code == 0);
  const auto sample_table = mvcopula::parse_csv(samples.out);
  REQUIRE(sample_table.values.rows() == 1000);
  REQUIRE(sample_table.values.cols() == 3);  // row index + p columns

  auto spearman = run("predict --artifact " + path_of("model.json") +
                      " --at 0.5,-0.5 --spearman");
  REQUIRE(spearman.code == 0);
  const auto gamma = mvcopula::parse_csv(spearman.out);
  REQUIRE(gamma.values.rows() == 2);
  REQUIRE(gamma.values(0, 0) == 1.0);
  REQUIRE(gamma.values(1, 1) == 1.0);
  REQUIRE(gamma.values(0, 1) == gamma.values(1, 0));

  auto mismatch = run("predict --artifact " + path_of("model.json") + " --at 1,2,3");
  REQUIRE(mismatch.code == 2);
}

TEST_CASE("predict means on training rows are finite and match the library")
{
  const auto table = mvcopula::read_csv(path_of("train.csv"));
  mvcopula::write_csv(path_of("x.csv"), { "x1", "x2" }, table.values.rightCols(2));
  const auto res =
      run("predict --artifact " + path_of("model.json") + " --x-file " + path_of("x.csv"));
  REQUIRE(res.code == 0);
  const auto out = mvcopula::parse_csv(res.out);
  REQUIRE(out.values.rows() == table.values.rows());
  REQUIRE(out.values.allFinite());

  // cross-check one row against the in-process prediction
  const auto model = mvcopula::load_model(path_of("model.json"));
  const mvcopula::VectorXd x0 = table.values.row(0).tail(2);
  REQUIRE(out.values(0, 1) ==
          Catch::Approx(mvcopula::marginal_mean(model, x0, 0)).epsilon(1e-12));
  REQUIRE(out.values(0, 2) ==
          Catch::Approx(mvcopula::marginal_mean(model, x0, 1)).epsilon(1e-12));
}

TEST_CASE("benchmark emits a score table CSV")
{
  mvcopula::atomic_write_file(
      path_of("bench.json"),
      "{\"synthetic\": {\"n\": 120, \"rho\": 0.4}, \"folds\": 3, \"crps_samples\": 80,"
      " \"models\": ["
      "{\"name\": \"MVC-TPS-P1\", \"type\": \"mvc\", \"basis\": \"tps\","
      " \"prior\": 1, \"knots\": 4, \"iterations\": 200, \"factors\": 2},"
      "{\"name\": \"NOC\", \"type\": \"noc\", \"basis\": \"linear\"}]}\n");
  const auto res = run("benchmark --config " + path_of("bench.json") + " --seed 3");
  INFO(res.err);
  REQUIRE(res.code == 0);
  REQUIRE(res.out.rfind("model,CRPS,LS,RMSE", 0) == 0);
  REQUIRE(res.out.find("MVC-TPS-P1") != std::string::npos);
  REQUIRE(res.out.find("NOC") != std::string::npos);
  // three header-plus-rows lines: header + 2 models
  REQUIRE(std::count(res.out.begin(), res.out.end(), '\n') == 3);
}

TEST_CASE("simulate is deterministic per seed")
{
  const std::string cmd = "simulate --n-sims 15 --species 120 --seed 8";
  const auto a = run(cmd);
  const auto b = run(cmd);
  REQUIRE(a.code == 0);
  REQUIRE(a.out == b.out);
  const auto table = mvcopula::parse_csv(a.out);
  REQUIRE(table.values.rows() == 15);
  REQUIRE(table.header.size() == 10);  // 5 transformed parameters + H1..H5
  REQUIRE(table.header[5] == "H1");

  const auto c = run("simulate --n-sims 15 --species 120 --seed 9");
  REQUIRE(c.out != a.out);
}

TEST_CASE("lfi pipeline: train, posterior, calibrate")
{
  const auto train = run("lfi-train --n-sims 500 --species 120 --iterations 200"
                         " --knots 40 --vi-factors 4 --seed 2 --out " +
                         path_of("lfi.json"));
  INFO(train.err);
  REQUIRE(train.code == 0);

  const auto post = run("lfi-posterior --artifact " + path_of("lfi.json") +
                        " --h-obs 1.4,0.5,0.2,0.3,0.1 --samples 50 --seed 3");
  REQUIRE(post.code == 0);
  const auto draws = mvcopula::parse_csv(post.out);
  REQUIRE(draws.values.rows() == 50);
  REQUIRE(draws.values.cols() == 5);
  REQUIRE(draws.values.col(1).minCoeff() > 0.0);  // sigma2
  REQUIRE(draws.values.col(3).minCoeff() > 0.0);  // phi1
  REQUIRE(draws.values.col(4).minCoeff() > 0.0);  // phi2

  const auto cal = run("calibrate --artifact " + path_of("lfi.json") +
                       " --test-sims 10 --species 120 --posterior-samples 50 --seed 4");
  REQUIRE(cal.code == 0);
  const auto distances = mvcopula::parse_csv(cal.out);
  REQUIRE(distances.values.rows() == 5);
  REQUIRE(distances.values.col(1).minCoeff() >= 0.0);
  REQUIRE(distances.values.col(1).maxCoeff() <= 1.0);

  const auto missing = run("lfi-posterior --artifact " + path_of("lfi.json") +
                           " --samples 10");
  REQUIRE(missing.code == 2);
}

int main(int argc, char* argv[])
{
  if (argc < 2) {
    std::fprintf(stderr, "usage: cli_tests <mvcopula_cli binary> [catch2 args...]\n");
    return 1;
  }
  g_binary = argv[1];
  g_dir = std::filesystem::temp_directory_path() /
          ("mvcopula_cli_test_" + std::to_string(::getpid()));
  std::filesystem::create_directories(g_dir);

  Catch::Session session;
  const int result = session.run(argc - 1, argv + 1);
  std::filesystem::remove_all(g_dir);
  return result;
}
