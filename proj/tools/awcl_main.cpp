#include <CLI11.hpp>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "awcl/config.hpp"
#include "awcl/data.hpp"
#include "awcl/eval.hpp"
#include "awcl/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace awcl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitMissing = 4;

// Exclusive lock on the output directory for the lifetime of a run.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : lock_(dir / ".lock") {
    fs::create_directories(dir);
    if (fs::exists(lock_))
      throw IoError("output directory is locked by another run: " + lock_.string());
    std::ofstream out(lock_);
    if (!out) throw IoError("cannot create lock file: " + lock_.string());
    out << "pid=" << ::getpid() << "\n";
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(lock_, ec);
  }

 private:
  fs::path lock_;
};

// Relative input paths resolve against AWCL_DATA_ROOT when it is set.
fs::path resolve_input(const std::string& p) {
  fs::path path(p);
  if (path.is_relative() && !fs::exists(path)) {
    if (const char* root = std::getenv("AWCL_DATA_ROOT")) {
      const fs::path rooted = fs::path(root) / path;
      if (fs::exists(rooted)) return rooted;
    }
  }
  return path;
}

void write_snapshot(const fs::path& out_dir, const RunConfig& config) {
  save_run_config(out_dir / "config_resolved.json", config);
}

json classification_to_json(const ClassificationReport& r) {
  json per_class = json::array();
  for (size_t c = 0; c < r.f1.size(); ++c)
    per_class.push_back({{"precision", r.precision[c]},
                         {"recall", r.recall[c]},
                         {"f1", r.f1[c]},
                         {"absent", r.absent[c] != 0}});
  return {{"macro_precision", r.macro_precision},
          {"macro_recall", r.macro_recall},
          {"macro_f1", r.macro_f1},
          {"per_class", per_class}};
}

void write_classification_report(const fs::path& out_dir, const FinetuneReport& r) {
  std::ofstream txt(out_dir / "report.txt");
  char buf[128];
  std::snprintf(buf, sizeof buf, "macro_precision_mean %.6f\n", r.macro_precision_mean);
  txt << buf;
  std::snprintf(buf, sizeof buf, "macro_precision_std %.6f\n", r.macro_precision_std);
  txt << buf;
  std::snprintf(buf, sizeof buf, "macro_recall_mean %.6f\n", r.macro_recall_mean);
  txt << buf;
  std::snprintf(buf, sizeof buf, "macro_recall_std %.6f\n", r.macro_recall_std);
  txt << buf;
  std::snprintf(buf, sizeof buf, "macro_f1_mean %.6f\n", r.macro_f1_mean);
  txt << buf;
  std::snprintf(buf, sizeof buf, "macro_f1_std %.6f\n", r.macro_f1_std);
  txt << buf;
  txt << "folds " << r.folds.size() << "\n";

  json j;
  j["macro_f1_mean"] = r.macro_f1_mean;
  j["macro_f1_std"] = r.macro_f1_std;
  j["macro_precision_mean"] = r.macro_precision_mean;
  j["macro_precision_std"] = r.macro_precision_std;
  j["macro_recall_mean"] = r.macro_recall_mean;
  j["macro_recall_std"] = r.macro_recall_std;
  j["folds"] = json::array();
  for (const auto& f : r.folds) j["folds"].push_back(classification_to_json(f));
  std::ofstream(out_dir / "report.json") << j.dump(2) << "\n";
}

void write_segmentation_report(const fs::path& out_dir, const SegmentationReport& r) {
  std::ofstream txt(out_dir / "report.txt");
  char buf[64];
  std::snprintf(buf, sizeof buf, "gaa %.6f\n", r.gaa);
  txt << buf;
  std::snprintf(buf, sizeof buf, "ma %.6f\n", r.ma);
  txt << buf;
  std::snprintf(buf, sizeof buf, "miou %.6f\n", r.miou);
  txt << buf;
  for (size_t c = 0; c < r.per_class_iou.size(); ++c) {
    std::snprintf(buf, sizeof buf, "iou_class%zu %.6f\n", c, r.per_class_iou[c]);
    txt << buf;
  }
  json j{{"gaa", r.gaa}, {"ma", r.ma}, {"miou", r.miou}, {"per_class_iou", r.per_class_iou},
         {"per_class_acc", r.per_class_acc}};
  std::ofstream(out_dir / "report.json") << j.dump(2) << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"anatomy-aware contrastive pretraining and transfer evaluation"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_dir, from_ckpt, spec_path;
  std::string layer = "penultimate", protocol = "full";
  std::string confusion_path, pred_dir, true_dir;
  int task = 2, n_classes = 0;
  bool with_tsne = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic scan dataset");
  synth->add_option("--spec", spec_path, "synthetic spec (json)")->required();
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* pretrain_cmd = app.add_subcommand("pretrain", "contrastive pretraining");
  pretrain_cmd->add_option("--config", config_path, "run config (json)")->required();
  pretrain_cmd->add_option("--data", data_path, "dataset manifest")->required();
  pretrain_cmd->add_option("--out", out_dir, "output directory")->required();
  std::string resume_from;
  pretrain_cmd->add_option("--resume", resume_from, "checkpoint to resume from");

  auto* finetune_cmd = app.add_subcommand("finetune", "supervised transfer fine-tuning");
  finetune_cmd->add_option("--task", task, "downstream task id (1,2,3)")->required();
  finetune_cmd->add_option("--protocol", protocol, "full|partial");
  finetune_cmd->add_option("--from", from_ckpt, "pretrained checkpoint (omit for random init)");
  finetune_cmd->add_option("--config", config_path, "run config (json)");
  finetune_cmd->add_option("--data", data_path, "task manifest")->required();
  finetune_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* probe_cmd = app.add_subcommand("probe", "frozen-encoder linear probe");
  probe_cmd->add_option("--from", from_ckpt, "pretrained checkpoint")->required();
  probe_cmd->add_option("--config", config_path, "run config (json)");
  probe_cmd->add_option("--data", data_path, "labeled manifest")->required();
  probe_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* embed_cmd = app.add_subcommand("embed", "export embeddings for projection analysis");
  embed_cmd->add_option("--from", from_ckpt, "pretrained checkpoint")->required();
  embed_cmd->add_option("--layer", layer, "penultimate|projection");
  embed_cmd->add_option("--data", data_path, "manifest")->required();
  embed_cmd->add_option("--out", out_dir, "output directory")->required();
  embed_cmd->add_flag("--tsne", with_tsne, "append seeded 2-D t-SNE coordinates");

  auto* metrics_cmd = app.add_subcommand("metrics", "metrics from saved predictions");
  metrics_cmd->add_option("--confusion", confusion_path, "confusion matrix (tsv, rows=true)");
  metrics_cmd->add_option("--pred", pred_dir, "directory of predicted masks");
  metrics_cmd->add_option("--true", true_dir, "directory of ground-truth masks");
  metrics_cmd->add_option("--classes", n_classes, "segmentation class count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: class=usage detail=" << e.what() << "\n";
    return kExitUsage;
  }

  if (synth->parsed()) {
    RunConfig rc;
    {
      std::ifstream in(resolve_input(spec_path));
      if (!in) throw IoError("cannot open spec: " + spec_path);
      json j = json::parse(in, nullptr, false);
      if (j.is_discarded()) throw ConfigError("invalid JSON in " + spec_path);
      rc = run_config_from_json(j.contains("synth") ? j : json{{"synth", j}});
    }
    rc.synth.validate();
    DirLock lock(out_dir);
    write_snapshot(out_dir, rc);
    generate_synthetic(rc.synth, out_dir);
    std::cout << "dataset written to " << out_dir << "\n";
    return kExitOk;
  }

  if (pretrain_cmd->parsed()) {
    RunConfig rc = load_run_config(resolve_input(config_path));
    rc.train.validate();
    DatasetManifest manifest = load_manifest(resolve_input(data_path));
    DirLock lock(out_dir);
    write_snapshot(out_dir, rc);
    PretrainResult result =
        resume_from.empty() ? pretrain(rc.train, manifest, out_dir)
                            : pretrain_resume(resolve_input(resume_from), rc.train, manifest, out_dir);
    std::cout << "pretraining done: " << result.log.size() << " steps, checkpoints in " << out_dir
              << "\n";
    return kExitOk;
  }

  if (finetune_cmd->parsed()) {
    RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(resolve_input(config_path));
    if (task < 1 || task > 3) throw ConfigError("eval.task must be 1, 2 or 3");
    rc.eval.task = static_cast<TaskId>(task);
    if (protocol == "full") rc.eval.protocol = Protocol::full_finetune;
    else if (protocol == "partial") rc.eval.protocol = Protocol::partial_finetune;
    else throw ConfigError("eval.protocol must be full or partial (got '" + protocol + "')");
    rc.eval.validate();

    DatasetManifest manifest = load_manifest(resolve_input(data_path));
    std::optional<Checkpoint> init;
    if (!from_ckpt.empty()) init = load_checkpoint(resolve_input(from_ckpt));
    DirLock lock(out_dir);
    write_snapshot(out_dir, rc);
    FinetuneReport report = finetune(init, rc.eval, manifest);
    if (report.is_segmentation) write_segmentation_report(out_dir, report.seg);
    else write_classification_report(out_dir, report);
    std::cout << "report written to " << (fs::path(out_dir) / "report.txt") << "\n";
    return kExitOk;
  }

  if (probe_cmd->parsed()) {
    RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(resolve_input(config_path));
    rc.probe.validate();
    DatasetManifest manifest = load_manifest(resolve_input(data_path));
    Checkpoint ckpt = load_checkpoint(resolve_input(from_ckpt));
    DirLock lock(out_dir);
    write_snapshot(out_dir, rc);
    ProbeResult result = linear_probe(ckpt.spec, ckpt.store, manifest, rc.probe);
    if (result.encoder_hash_before != result.encoder_hash_after)
      throw NumericalError("probe mutated encoder parameters");

    std::ofstream txt(fs::path(out_dir) / "report.txt");
    char buf[64];
    std::snprintf(buf, sizeof buf, "macro_precision %.6f\n", result.report.macro_precision);
    txt << buf;
    std::snprintf(buf, sizeof buf, "macro_recall %.6f\n", result.report.macro_recall);
    txt << buf;
    std::snprintf(buf, sizeof buf, "macro_f1 %.6f\n", result.report.macro_f1);
    txt << buf;
    json j = classification_to_json(result.report);
    j["encoder_hash_unchanged"] = true;
    std::ofstream(fs::path(out_dir) / "report.json") << j.dump(2) << "\n";
    std::cout << "probe macro_f1 " << result.report.macro_f1 << "\n";
    return kExitOk;
  }

  if (embed_cmd->parsed()) {
    RunConfig rc;
    DatasetManifest manifest = load_manifest(resolve_input(data_path));
    Checkpoint ckpt = load_checkpoint(resolve_input(from_ckpt));
    EmbedLayer el;
    if (layer == "penultimate") el = EmbedLayer::penultimate;
    else if (layer == "projection") el = EmbedLayer::projection;
    else throw ConfigError("embed.layer must be penultimate or projection (got '" + layer + "')");
    DirLock lock(out_dir);
    write_snapshot(out_dir, rc);
    EmbeddingTable table = compute_embeddings(ckpt.spec, ckpt.store, manifest, el);
    if (with_tsne) table.coords2d = tsne_2d(table.vectors, 30.0, 1000, rc.seed);
    write_embedding_table(fs::path(out_dir) / "embeddings.tsv", table);
    std::cout << "embeddings written to " << (fs::path(out_dir) / "embeddings.tsv") << "\n";
    return kExitOk;
  }

  if (metrics_cmd->parsed()) {
    if (!confusion_path.empty()) {
      std::ifstream in(resolve_input(confusion_path));
      if (!in) throw IoError("cannot open confusion matrix: " + confusion_path);
      std::vector<std::vector<int64_t>> rows;
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<int64_t> row;
        std::stringstream ss(line);
        int64_t v;
        while (ss >> v) row.push_back(v);
        rows.push_back(std::move(row));
      }
      if (rows.empty()) throw ParseError("empty confusion matrix file");
      Confusion c(rows.size(), rows[0].size());
      for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) throw ParseError("ragged confusion matrix");
        for (size_t j = 0; j < rows[i].size(); ++j)
          c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
      }
      const auto rep = classification_metrics(c);
      std::cout << "macro_precision " << rep.macro_precision << "\n"
                << "macro_recall " << rep.macro_recall << "\n"
                << "macro_f1 " << rep.macro_f1 << "\n";
      return kExitOk;
    }
    if (!pred_dir.empty() && !true_dir.empty() && n_classes > 0) {
      std::vector<Mask> pred, truth;
      std::vector<fs::path> files;
      for (const auto& p : fs::directory_iterator(resolve_input(pred_dir)))
        if (p.path().extension() == ".pgm") files.push_back(p.path());
      std::sort(files.begin(), files.end());
      for (const auto& p : files) {
        pred.push_back(read_mask_pgm(p));
        truth.push_back(read_mask_pgm(fs::path(resolve_input(true_dir)) / p.filename()));
      }
      const auto rep = segmentation_metrics(pred, truth, n_classes);
      std::cout << "gaa " << rep.gaa << "\nma " << rep.ma << "\nmiou " << rep.miou << "\n";
      return kExitOk;
    }
    std::cerr << "error: class=usage detail=metrics needs --confusion or --pred/--true/--classes\n";
    return kExitUsage;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: class=config detail=" << e.what() << "\n";
    return kExitConfig;
  } catch (const ArgumentError& e) {
    std::cerr << "error: class=config detail=" << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "error: class=missing_file detail=" << e.what() << "\n";
    return kExitMissing;
  } catch (const ParseError& e) {
    std::cerr << "error: class=parse detail=" << e.what() << "\n";
    return kExitMissing;
  } catch (const TaxonomyError& e) {
    std::cerr << "error: class=taxonomy detail=" << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: class=runtime detail=" << e.what() << "\n";
    return kExitRuntime;
  }
}
