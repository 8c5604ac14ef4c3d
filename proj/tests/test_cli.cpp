#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using namespace std;
namespace fs = std::filesystem;

namespace {

string cli() {
  const char* bin = getenv("AWCL_BIN");
  REQUIRE(bin != nullptr);
  return bin;
}

int run_cli(const string& args) {
  const string cmd = cli() + " " + args + " > /dev/null 2>> " + (fs::temp_directory_path() / "awcl_cli_err.txt").string();
  const int status = system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path fresh_dir(const string& tag) {
  const fs::path p = fs::temp_directory_path() / ("awcl_cli_" + tag);
  fs::remove_all(p);
  return p;
}

void write_file(const fs::path& p, const string& content) {
  fs::create_directories(p.parent_path());
  ofstream(p) << content;
}

string slurp(const fs::path& p) {
  ifstream in(p);
  return string((istreambuf_iterator<char>(in)), istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with code 2") {
  CHECK(run_cli("") == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("pretrain --no-such-flag x") == 2);
}

TEST_CASE("invalid config values exit with code 3 and name the field") {
  const fs::path dir = fresh_dir("badcfg");
  fs::create_directories(dir);
  write_file(dir / "spec.json", R"({"n_scans": 3, "frames_per_scan": 8, "n_fine_classes": 4,
    "fine_per_coarse": 2, "label_fraction": 0.5, "image_h": 12, "image_w": 12, "seed": 1})");
  REQUIRE(run_cli("synth --spec " + (dir / "spec.json").string() + " --out " + (dir / "ds").string()) == 0);

  write_file(dir / "bad.json",
             R"({"train": {"mode": "awcl", "granularity": "fine", "anatomy_ratio": 1.5, "epochs": 1}})");
  const fs::path err = fs::temp_directory_path() / "awcl_cli_err.txt";
  fs::remove(err);
  CHECK(run_cli("pretrain --config " + (dir / "bad.json").string() + " --data " +
                (dir / "ds/manifest.tsv").string() + " --out " + (dir / "out").string()) == 3);
  CHECK(slurp(err).find("anatomy_ratio") != string::npos);
}

TEST_CASE("missing input files exit with code 4") {
  const fs::path dir = fresh_dir("missing");
  fs::create_directories(dir);
  write_file(dir / "cfg.json", R"({"train": {"epochs": 1}})");
  CHECK(run_cli("pretrain --config " + (dir / "cfg.json").string() + " --data /nonexistent/m.tsv --out " +
                (dir / "out").string()) == 4);
}

TEST_CASE("locked output directories are refused") {
  const fs::path dir = fresh_dir("locked");
  const fs::path out = dir / "out";
  fs::create_directories(out);
  write_file(out / ".lock", "pid=0\n");
  write_file(dir / "spec.json", R"({"n_scans": 2, "frames_per_scan": 4, "n_fine_classes": 2,
    "fine_per_coarse": 1, "label_fraction": 0, "image_h": 8, "image_w": 8})");
  CHECK(run_cli("synth --spec " + (dir / "spec.json").string() + " --out " + out.string()) == 4);
}

TEST_CASE("synth -> pretrain -> probe -> embed pipeline succeeds end to end") {
  const fs::path dir = fresh_dir("pipeline");
  fs::create_directories(dir);
  write_file(dir / "spec.json", R"({"n_scans": 6, "frames_per_scan": 20, "n_fine_classes": 4,
    "fine_per_coarse": 2, "label_fraction": 1.0, "image_h": 16, "image_w": 16, "seed": 5})");
  REQUIRE(run_cli("synth --spec " + (dir / "spec.json").string() + " --out " + (dir / "ds").string()) == 0);
  CHECK(fs::exists(dir / "ds/manifest.tsv"));
  CHECK(fs::exists(dir / "ds/taxonomy.tsv"));
  CHECK(fs::exists(dir / "ds/config_resolved.json"));
  CHECK_FALSE(fs::exists(dir / "ds/.lock"));  // released after the run

  write_file(dir / "cfg.json",
             R"({"seed": 9, "train": {"epochs": 1, "batch_size": 8, "mode": "awcl",
                 "granularity": "fine", "anatomy_ratio": 0.5}})");
  REQUIRE(run_cli("pretrain --config " + (dir / "cfg.json").string() + " --data " +
                  (dir / "ds/manifest.tsv").string() + " --out " + (dir / "run").string()) == 0);
  CHECK(fs::exists(dir / "run/last.ckpt"));
  CHECK(fs::exists(dir / "run/best.ckpt"));
  CHECK(fs::exists(dir / "run/loss_log.tsv"));
  CHECK(fs::exists(dir / "run/config_resolved.json"));

  REQUIRE(run_cli("probe --from " + (dir / "run/best.ckpt").string() + " --config " +
                  (dir / "cfg.json").string() + " --data " + (dir / "ds/manifest.tsv").string() +
                  " --out " + (dir / "probe").string()) == 0);
  CHECK(fs::exists(dir / "probe/report.txt"));
  CHECK(fs::exists(dir / "probe/report.json"));

  REQUIRE(run_cli("embed --from " + (dir / "run/best.ckpt").string() + " --layer penultimate --tsne --data " +
                  (dir / "ds/manifest.tsv").string() + " --out " + (dir / "emb").string()) == 0);
  CHECK(fs::exists(dir / "emb/embeddings.tsv"));
  {
    ifstream in(dir / "emb/embeddings.tsv");
    string first;
    getline(in, first);
    size_t cols = 1;
    for (const char ch : first)
      if (ch == '\t') ++cols;
    CHECK(cols == 2 + 32 + 2);  // id, label, features, 2-D coordinates
  }
}

TEST_CASE("finetune subcommand trains a head and writes reports") {
  const fs::path dir = fresh_dir("finetune");
  fs::create_directories(dir);
  write_file(dir / "spec.json", R"({"n_scans": 6, "frames_per_scan": 16, "n_fine_classes": 4,
    "fine_per_coarse": 2, "label_fraction": 1.0, "image_h": 16, "image_w": 16, "seed": 11})");
  REQUIRE(run_cli("synth --spec " + (dir / "spec.json").string() + " --out " + (dir / "ds").string()) == 0);

  write_file(dir / "cfg.json",
             R"({"seed": 4, "eval": {"task2": {"epochs": 3, "lr": 0.02, "lr_decay_epoch": 2,
                 "batch_size": 16}}})");
  REQUIRE(run_cli("finetune --task 2 --protocol full --config " + (dir / "cfg.json").string() +
                  " --data " + (dir / "ds/manifest.tsv").string() + " --out " +
                  (dir / "ft").string()) == 0);
  CHECK(fs::exists(dir / "ft/report.txt"));
  CHECK(fs::exists(dir / "ft/report.json"));
  CHECK(slurp(dir / "ft/report.txt").find("macro_f1_mean") != string::npos);

  CHECK(run_cli("finetune --task 9 --config " + (dir / "cfg.json").string() + " --data " +
                (dir / "ds/manifest.tsv").string() + " --out " + (dir / "ft2").string()) == 3);
}

TEST_CASE("metrics subcommand scores a confusion matrix file") {
  const fs::path dir = fresh_dir("metrics");
  fs::create_directories(dir);
  write_file(dir / "conf.tsv", "5 5\n0 10\n");
  const string out_file = (dir / "out.txt").string();
  const string cmd = cli() + " metrics --confusion " + (dir / "conf.tsv").string() + " > " + out_file + " 2>/dev/null";
  REQUIRE(WEXITSTATUS(system(cmd.c_str())) == 0);
  const string out = slurp(out_file);
  CHECK(out.find("macro_f1 0.733333") != string::npos);
}

}  // TEST_SUITE
