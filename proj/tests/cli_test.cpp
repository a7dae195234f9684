#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#ifndef FSP_CLI_PATH
#define FSP_CLI_PATH "fsp"
#endif

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code;
  std::string output;
};

CliResult run_cli(const std::string& args, const std::string& cwd) {
  const std::string out_file = cwd + "/cli_out.txt";
  const std::string cmd =
      "cd " + cwd + " && " + FSP_CLI_PATH + " " + args + " > cli_out.txt 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream is(out_file);
  std::stringstream ss;
  ss << is.rdbuf();
  return {WEXITSTATUS(status), ss.str()};
}

std::string fresh_dir(const std::string& tag) {
  const std::string d = (fs::temp_directory_path() / ("fsp_cli_" + tag)).string();
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_config(const std::string& path, const std::string& extra = "") {
  std::ofstream os(path);
  os << "objective.kind = ntp\n"
        "model.n_layers = 2\n"
        "model.d_model = 32\n"
        "model.n_heads = 2\n"
        "train.batch_size = 32\n"
        "train.epochs = 1\n"
        "train.lr = 1e-3\n"
        "eval.samples = 32\n"
        "eval.train_subset = 32\n"
        "data.dir = data\n"
        "out.dir = runs\n"
        "run.name = t\n"
     << extra;
}

}  // namespace

TEST(Cli, GenDataDeterministicManifestHash) {
  const std::string d1 = fresh_dir("gen1");
  const std::string d2 = fresh_dir("gen2");
  auto r1 = run_cli("gen-data path-star --d 2 --l 6 --n 100 --n-test 20 --seed 7 --out data", d1);
  auto r2 = run_cli("gen-data path-star --d 2 --l 6 --n 100 --n-test 20 --seed 7 --out data", d2);
  ASSERT_EQ(r1.exit_code, 0) << r1.output;
  EXPECT_EQ(r1.output, r2.output);  // includes the manifest content hash
  EXPECT_EQ(read_file(d1 + "/data/train.bin"), read_file(d2 + "/data/train.bin"));

  auto r3 = run_cli("gen-data path-star --d 2 --l 6 --n 100 --n-test 20 --seed 8 --out data3", d1);
  ASSERT_EQ(r3.exit_code, 0);
  EXPECT_NE(read_file(d1 + "/data/train.bin"), read_file(d1 + "/data3/train.bin"));
}

TEST(Cli, GenDataSiblingValidates) {
  const std::string d = fresh_dir("gensib");
  auto r = run_cli("gen-data sibling --k 4 --n-values 10 --n 200 --seed 7 --out data", d);
  EXPECT_EQ(r.exit_code, 0) << r.output;
  EXPECT_TRUE(fs::exists(d + "/data/manifest.json"));
}

TEST(Cli, MissingRequiredFlagIsUsageError) {
  const std::string d = fresh_dir("usage");
  auto r = run_cli("gen-data path-star --d 2 --l 6 --seed 7 --out data", d);  // no --n
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("--n"), std::string::npos);

  auto r2 = run_cli("definitely-not-a-command", d);
  EXPECT_EQ(r2.exit_code, 2);
}

TEST(Cli, TrainHappyPathOverridesAndIdempotence) {
  const std::string d = fresh_dir("train");
  ASSERT_EQ(run_cli("gen-data sibling --k 2 --n-values 5 --n 200 --n-test 40 --seed 3 --out data", d).exit_code, 0);
  write_config(d + "/t.cfg");

  auto r = run_cli("train --config t.cfg --seed 1 --set train.lr=5e-4", d);
  ASSERT_EQ(r.exit_code, 0) << r.output;
  // locate the run dir from the output line
  const auto pos = r.output.find("run dir: ");
  ASSERT_NE(pos, std::string::npos);
  const std::string run_dir =
      d + "/" + r.output.substr(pos + 9, r.output.find('\n', pos) - pos - 9);
  EXPECT_TRUE(fs::exists(run_dir + "/metrics.csv"));
  EXPECT_TRUE(fs::exists(run_dir + "/ckpt_final.bin"));

  // --set override lands in the summary's config echo
  std::ifstream is(run_dir + "/summary.json");
  std::stringstream ss;
  ss << is.rdbuf();
  EXPECT_NE(ss.str().find("\"train.lr\": \"5e-04\""), std::string::npos);

  // rerun with identical inputs: identical metrics.csv
  const std::string csv = read_file(run_dir + "/metrics.csv");
  auto r2 = run_cli("train --config t.cfg --seed 1 --set train.lr=5e-4", d);
  ASSERT_EQ(r2.exit_code, 0);
  EXPECT_EQ(csv, read_file(run_dir + "/metrics.csv"));

  // --reuse skips retraining but reports the same run
  auto r3 = run_cli("train --config t.cfg --seed 1 --set train.lr=5e-4 --reuse", d);
  ASSERT_EQ(r3.exit_code, 0);
  EXPECT_NE(r3.output.find("run dir:"), std::string::npos);
}

TEST(Cli, TrainTeacherThenStudentPipeline) {
  const std::string d = fresh_dir("pipeline");
  ASSERT_EQ(run_cli("gen-data sibling --k 2 --n-values 5 --n 300 --n-test 60 --seed 5 --out data", d).exit_code, 0);
  write_config(d + "/teacher.cfg", "run.name = teacher\ntrain.epochs = 4\n");
  auto rt = run_cli("train-teacher --config teacher.cfg --seed 1", d);
  ASSERT_EQ(rt.exit_code, 0) << rt.output;
  const auto pos = rt.output.find("run dir: ");
  const std::string teacher_dir =
      d + "/" + rt.output.substr(pos + 9, rt.output.find('\n', pos) - pos - 9);

  // teacher eval CE is logged and beats the uniform floor ln(V)
  nlohmann::json summary;
  {
    std::ifstream is(teacher_dir + "/summary.json");
    is >> summary;
  }
  const double ce = summary["final"]["eval/loss"].get<double>();
  const double ln_v = std::log(2 * (3 * 5 + 1) + 4);
  EXPECT_LT(ce, ln_v);

  write_config(d + "/student.cfg",
               "run.name = student\nobjective.kind = fsp-revlm\nobjective.teacher = " +
                   teacher_dir + "/ckpt_final.bin\ntrain.epochs = 1\n");
  auto rs = run_cli("train --config student.cfg --seed 1", d);
  ASSERT_EQ(rs.exit_code, 0) << rs.output;

  // student records and verifies the teacher checkpoint hash
  const auto pos2 = rs.output.find("run dir: ");
  const std::string student_dir =
      d + "/" + rs.output.substr(pos2 + 9, rs.output.find('\n', pos2) - pos2 - 9);
  nlohmann::json ssum;
  {
    std::ifstream is(student_dir + "/summary.json");
    is >> ssum;
  }
  EXPECT_EQ(ssum["teacher_weight_hash"], summary["weight_hash"]);
}

TEST(Cli, EvalAndReportCommands) {
  const std::string d = fresh_dir("report");
  ASSERT_EQ(run_cli("gen-data sibling --k 2 --n-values 5 --n 200 --n-test 40 --seed 3 --out data", d).exit_code, 0);
  write_config(d + "/t.cfg");
  ASSERT_EQ(run_cli("train --config t.cfg --seed 1", d).exit_code, 0);
  ASSERT_EQ(run_cli("train --config t.cfg --seed 2", d).exit_code, 0);
  ASSERT_EQ(run_cli("train --config t.cfg --seed 3 --set objective.kind=fsp-bce --set objective.tau=8", d).exit_code, 0);

  auto re = run_cli("eval --run $(ls -d runs/* | head -1)", d);
  ASSERT_EQ(re.exit_code, 0) << re.output;
  EXPECT_NE(re.output.find("coherence"), std::string::npos);

  auto rr = run_cli("report --runs runs --out rep", d);
  ASSERT_EQ(rr.exit_code, 0) << rr.output;
  EXPECT_NE(rr.output.find("ntp"), std::string::npos);
  EXPECT_NE(rr.output.find("fsp-bce(tau=8,tfidf)"), std::string::npos);
  EXPECT_NE(rr.output.find("[n=1]"), std::string::npos);  // single-seed annotation
  EXPECT_TRUE(fs::exists(d + "/rep/report.csv"));
  EXPECT_TRUE(fs::exists(d + "/rep/ratios.csv"));
}

TEST(Cli, ExitCodes) {
  const std::string d = fresh_dir("exits");
  ASSERT_EQ(run_cli("gen-data sibling --k 2 --n-values 5 --n 128 --seed 3 --out data", d).exit_code, 0);

  // numerical abort -> 3
  write_config(d + "/nan.cfg", "train.lr = 1e25\ntrain.grad_clip = 0\ntrain.max_steps = 20\n");
  auto r3 = run_cli("train --config nan.cfg --seed 1", d);
  EXPECT_EQ(r3.exit_code, 3) << r3.output;
  EXPECT_NE(r3.output.find("abort"), std::string::npos);

  // missing dependency artifact -> 4
  write_config(d + "/missing.cfg", "data.dir = nowhere\n");
  auto r4 = run_cli("train --config missing.cfg --seed 1", d);
  EXPECT_EQ(r4.exit_code, 4) << r4.output;

  // bad config value -> 2
  write_config(d + "/bad.cfg", "objective.kind = warp\n");
  auto r2 = run_cli("train --config bad.cfg --seed 1", d);
  EXPECT_EQ(r2.exit_code, 2) << r2.output;
}
