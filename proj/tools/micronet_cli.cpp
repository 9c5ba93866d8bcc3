// Command-line entry point: architecture summaries and audits, parameter
// counting, receptive-field analysis, synthetic data generation, training
// and evaluation. Exit codes: 0 success, 2 usage/config error, 3 runtime
// numeric failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "micronet/config.hpp"
#include "micronet/data.hpp"
#include "micronet/gemm.hpp"
#include "micronet/graph.hpp"
#include "micronet/metrics.hpp"
#include "micronet/rf.hpp"
#include "micronet/train.hpp"

namespace fs = std::filesystem;
using namespace micronet;

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write: " + path);
  os << content;
}

int cmd_summarize(const std::string& arch, int size, const std::string& csv_path) {
  auto spec = resolve_architecture(arch);
  auto graph = build_architecture<float>(spec);
  auto rows = summarize(graph, size, size);
  std::cout << summary_text(rows);
  std::cout << "total parameters: " << count_params(graph) << "\n";
  if (spec.variant == Variant::Micro) {
    for (const auto& a : audit_micro(graph)) {
      if (!a.match) {
        std::cout << "audit flag [" << a.layer << "]: " << a.note << "\n";
      }
    }
  }
  if (!csv_path.empty()) write_file(csv_path, summary_csv(rows));
  return 0;
}

int cmd_count_params(const std::string& arch, const std::string& vs) {
  auto a = build_architecture<float>(resolve_architecture(arch));
  const long long ca = count_params(a);
  std::cout << arch << ": " << ca << " parameters\n";
  if (!vs.empty()) {
    auto b = build_architecture<float>(resolve_architecture(vs));
    const long long cb = count_params(b);
    std::cout << vs << ": " << cb << " parameters\n";
    std::printf("compression ratio (%s/%s): %.2f\n", vs.c_str(), arch.c_str(),
                static_cast<double>(cb) / static_cast<double>(ca));
  }
  return 0;
}

int cmd_analyze_rf(const std::string& arch, const std::string& csv_path) {
  auto spec = resolve_architecture(arch);
  auto rows = rf_report(spec);
  const std::string csv = rf_report_csv(rows);
  std::cout << csv;
  if (!csv_path.empty()) write_file(csv_path, csv);
  return 0;
}

int cmd_gen_synthetic(int count, int size, uint64_t seed, const std::string& out) {
  auto patches = gen_synthetic(count, size, seed);
  DatasetManifest manifest;
  for (const auto& p : patches) {
    manifest.entries.push_back({p.id(), p.source, p.row, p.col, Split::Train});
  }
  split_manifest(manifest, 0.9, seed);
  write_dataset(out, patches, manifest);
  std::cout << "wrote " << patches.size() << " patches to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path,
              const std::map<std::string, std::string>& overrides) {
  std::map<std::string, std::string> file_kv;
  if (!config_path.empty()) file_kv = parse_kv_file(config_path);
  RunConfig cfg = RunConfig::resolve(file_kv, overrides);
  if (cfg.data_dir.empty()) throw ParamError("train requires data_dir");

  fs::create_directories(cfg.out_dir);
  // Resolved-config snapshot always lands before any other output artifact.
  write_file((fs::path(cfg.out_dir) / "resolved_config.txt").string(), cfg.to_kv());

  auto spec = resolve_architecture(cfg.arch);
  auto graph = build_architecture<float>(spec);
  auto ds = load_dataset(cfg.data_dir);

  std::vector<Sample<float>> train_set, val_set;
  for (auto& p : ds.train) train_set.push_back({std::move(p.image), std::move(p.label)});
  for (auto& p : ds.val) val_set.push_back({std::move(p.image), std::move(p.label)});

  TrainingConfig tc = cfg.training;
  tc.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.mnck").string();

  const std::string log_path = (fs::path(cfg.out_dir) / "train_log.csv").string();
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot write: " + log_path);
  log << "epoch,loss,miou,acc,seconds\n";
  log.flush();

  auto logs = train<float>(graph, train_set, val_set, tc, [&](const EpochLog<float>& l) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.3f\n", l.epoch, l.loss, l.miou, l.acc,
                  l.seconds);
    log << buf;
    log.flush();
    std::printf("epoch %3d  loss %.5f  miou %.4f  acc %.4f  (%.1fs)\n", l.epoch, l.loss, l.miou,
                l.acc, l.seconds);
  });
  // Embed the architecture in the final checkpoint so eval is self-contained.
  {
    OptimizerState<float> opt = OptimizerState<float>::init(graph);
    // reload the velocities written by the last epoch
    load_training_state(graph, &opt, tc.checkpoint_path);
    std::string meta = architecture_to_kv(spec) + "epochs=" + std::to_string(tc.epochs) + "\n";
    save_training_state(graph, opt, meta, tc.checkpoint_path);
  }
  std::cout << "done; checkpoint at " << tc.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& arch_arg, const std::string& split) {
  auto ck = checkpoint_load<float>(checkpoint);
  ArchitectureSpec spec;
  if (!arch_arg.empty()) {
    spec = resolve_architecture(arch_arg);
  } else if (!ck.meta.empty()) {
    auto kv = parse_kv(ck.meta);
    kv.erase("epochs");
    kv.erase("epoch");
    spec = architecture_from_kv(kv);
  } else {
    throw ParamError("checkpoint has no embedded architecture; pass --arch");
  }
  auto graph = build_architecture<float>(spec);
  load_training_state(graph, static_cast<OptimizerState<float>*>(nullptr), checkpoint);

  auto ds = load_dataset(data_dir);
  std::vector<Sample<float>> samples;
  auto take = [&](std::vector<LabeledPatch>& src) {
    for (auto& p : src) samples.push_back({std::move(p.image), std::move(p.label)});
  };
  if (split == "val" || split == "all") take(ds.val);
  if (split == "train" || split == "all") take(ds.train);
  if (samples.empty()) throw ValidationError("no patches in the requested split");

  auto cm = evaluate(graph, samples);
  std::cout << "class,iou\n";
  for (int c = 0; c < cm.categories(); ++c) {
    const double iou = class_iou(cm, c);
    std::cout << c << ",";
    if (iou >= 0) std::printf("%.6f", iou);
    else std::cout << "absent";
    std::cout << "\n";
  }
  std::printf("miou,acc\n%.6f,%.6f\n", miou(cm), acc(cm));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("MICRONET_THREADS")) {
    set_intra_op_threads(std::atoi(threads));
  }

  CLI::App app{"Micro-Net family: compact segmentation networks, analysis and training"};
  app.require_subcommand(1);

  std::string arch = "micro", vs, csv_path, config_path, checkpoint, data_dir, out_dir, split =
      "val";
  int size = 500, count = 200, patch_size = 64;
  uint64_t seed = 0;
  std::map<std::string, std::string> overrides;

  auto* s_sum = app.add_subcommand("summarize", "print per-layer architecture summary");
  s_sum->add_option("--arch", arch, "variant name or architecture config file");
  s_sum->add_option("--size", size, "input height/width for map sizes");
  s_sum->add_option("--csv", csv_path, "also write CSV to this path");

  auto* s_cnt = app.add_subcommand("count-params", "print parameter counts and ratio");
  s_cnt->add_option("--arch", arch, "variant name or architecture config file");
  s_cnt->add_option("--vs", vs, "second architecture; prints count(vs)/count(arch)");

  auto* s_rf = app.add_subcommand("analyze-rf", "per-sequence receptive-field analysis");
  s_rf->add_option("--arch", arch, "variant name or architecture config file");
  s_rf->add_option("--csv", csv_path, "also write CSV to this path");

  auto* s_gen = app.add_subcommand("gen-synthetic", "generate a synthetic dataset");
  s_gen->add_option("--count", count, "number of patches");
  s_gen->add_option("--size", patch_size, "patch height/width");
  s_gen->add_option("--seed", seed, "generator seed");
  s_gen->add_option("--out", out_dir, "output directory")->required();

  auto* s_train = app.add_subcommand("train", "train a model");
  s_train->add_option("--config", config_path, "run config file (key=value)");
  std::string f_arch, f_data, f_out, f_epochs, f_seed, f_batch, f_lr;
  s_train->add_option("--arch", f_arch, "override: architecture");
  s_train->add_option("--data", f_data, "override: dataset directory");
  s_train->add_option("--out", f_out, "override: output directory");
  s_train->add_option("--epochs", f_epochs, "override: epoch count");
  s_train->add_option("--seed", f_seed, "override: root seed");
  s_train->add_option("--batch-size", f_batch, "override: batch size");
  s_train->add_option("--learning-rate", f_lr, "override: learning rate");

  auto* s_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  s_eval->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  s_eval->add_option("--data", data_dir, "dataset directory")->required();
  s_eval->add_option("--arch", f_arch, "architecture (defaults to checkpoint metadata)");
  s_eval->add_option("--split", split, "val, train or all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (s_sum->parsed()) return cmd_summarize(arch, size, csv_path);
    if (s_cnt->parsed()) return cmd_count_params(arch, vs);
    if (s_rf->parsed()) return cmd_analyze_rf(arch, csv_path);
    if (s_gen->parsed()) return cmd_gen_synthetic(count, patch_size, seed, out_dir);
    if (s_train->parsed()) {
      if (!f_arch.empty()) overrides["arch"] = f_arch;
      if (!f_data.empty()) overrides["data_dir"] = f_data;
      if (!f_out.empty()) overrides["out_dir"] = f_out;
      if (!f_epochs.empty()) overrides["epochs"] = f_epochs;
      if (!f_seed.empty()) overrides["seed"] = f_seed;
      if (!f_batch.empty()) overrides["batch_size"] = f_batch;
      if (!f_lr.empty()) overrides["learning_rate"] = f_lr;
      return cmd_train(config_path, overrides);
    }
    if (s_eval->parsed()) return cmd_eval(checkpoint, data_dir, f_arch, split);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
