// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cfex/cli.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "cfex/analysis.hpp"
#include "cfex/error.hpp"
#include "cfex/explain.hpp"
#include "cfex/losses.hpp"
#include "cfex/model.hpp"
#include "cfex/tensor_io.hpp"
#include "cfex/training.hpp"
#include "json.hpp"

namespace cfex::cli {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// Collects what a run read and wrote; serialized as run_manifest.json.
class RunRecord {
 public:
  RunRecord(std::string command, fs::path out_dir)
      : command_(std::move(command)), out_dir_(std::move(out_dir)) {}

  void input(const std::string& role, const fs::path& path) {
    if (!fs::exists(path)) throw ValidationError(role + " file not found: " + path.string());
    inputs_[role] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
  }

  Json& config() { return config_; }
  const fs::path& dir() const { return out_dir_; }

  fs::path output(const std::string& name) {
    outputs_.push_back(name);
    return out_dir_ / name;
  }

  void write_json(const std::string& name, const Json& j) {
    std::ofstream f(output(name));
    f << j.dump(2) << "\n";
    if (!f) throw std::runtime_error("failed writing " + (out_dir_ / name).string());
  }

  void write_text(const std::string& name, const std::string& text) {
    std::ofstream f(output(name), std::ios::binary);
    f << text;
    if (!f) throw std::runtime_error("failed writing " + (out_dir_ / name).string());
  }

  void finish() {
    Json j;
    j["command"] = command_;
    j["version"] = kVersion;
    j["resolved_config"] = config_;
    j["input_digests"] = inputs_;
    j["outputs"] = outputs_;
    std::ofstream f(out_dir_ / "run_manifest.json");
    f << j.dump(2) << "\n";
    if (!f) throw std::runtime_error("failed writing run manifest");
  }

 private:
  std::string command_;
  fs::path out_dir_;
  Json config_ = Json::object();
  Json inputs_ = Json::object();
  std::vector<std::string> outputs_;
};

struct TrainFlags {
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  std::string policy;
  std::size_t source_class = 0;
  std::string logits = "signed";

  void attach(CLI::App* app) {
    app->add_option("--lr", learning_rate, "SGD learning rate")->capture_default_str();
    app->add_option("--momentum", momentum, "SGD momentum")->capture_default_str();
    app->add_option("--batch-size", batch_size, "mini-batch size")->capture_default_str();
    app->add_option("--epochs", epochs, "training epochs")->capture_default_str();
    app->add_option("--lambda", lambda, "sparsity weight (default 2 for MC, 1 for MI)");
    app->add_option("--seed", seed, "random seed")->capture_default_str();
    app->add_option("--policy", policy,
                    "subset policy: inferred-equals-target, inferred-not-target, "
                    "inferred-equals-source, all");
    app->add_option("--source", source_class, "source class for inferred-equals-source");
    app->add_option("--logits", logits, "MC logits term: signed, absolute, off")
        ->capture_default_str();
  }

  TrainConfig resolve(TrainConfig base) const {
    base.learning_rate = learning_rate;
    base.momentum = momentum;
    base.batch_size = batch_size;
    base.epochs = epochs;
    if (lambda) base.lambda = *lambda;
    base.seed = seed;
    if (!policy.empty()) base.subset.policy = parse_subset_policy(policy);
    base.subset.source_class = source_class;
    if (logits == "signed") {
      base.logits = LogitsTerm::kSigned;
    } else if (logits == "absolute") {
      base.logits = LogitsTerm::kAbsolute;
    } else if (logits == "off") {
      base.logits = LogitsTerm::kOff;
    } else {
      throw ValidationError("unknown logits term '" + logits + "'");
    }
    base.validate();
    return base;
  }
};

std::string format_double(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%g", v);
  return buffer;
}

std::vector<std::string> load_class_names(const std::string& manifest_path) {
  if (manifest_path.empty()) return {};
  std::ifstream f(manifest_path);
  if (!f) throw ValidationError("cannot open manifest " + manifest_path);
  std::stringstream ss;
  ss << f.rdbuf();
  return manifest_from_json(ss.str()).class_names;
}

void annotate_names(Json& j, const std::vector<std::string>& names,
                    std::initializer_list<const char*> keys) {
  for (const char* key : keys) {
    if (!j.contains(key)) continue;
    Json& node = j[key];
    const Json* index = node.is_object() && node.contains("class") ? &node["class"] : &node;
    if (index->is_number_unsigned() && index->get<std::size_t>() < names.size()) {
      j[std::string(key) + "_name"] = names[index->get<std::size_t>()];
    }
  }
}

// ---- subcommands -----------------------------------------------------------

struct GenSynthArgs {
  SynthOptions synth;
  std::size_t test_per_class = 100;
  std::size_t head_epochs = 50;
  double head_lr = 0.05;
  std::string out;
};

void run_gen_synth(const GenSynthArgs& a, std::ostream& out) {
  RunRecord run("gen-synth", a.out);
  auto& c = run.config();
  c["n"] = a.synth.filters;
  c["classes"] = a.synth.classes;
  c["per_class"] = a.synth.per_class;
  c["test_per_class"] = a.test_per_class;
  c["separation"] = a.synth.separation;
  c["noise"] = a.synth.noise;
  c["support"] = a.synth.support;
  c["visibility"] = a.synth.visibility;
  c["spatial"] = a.synth.spatial;
  c["seed"] = a.synth.seed;
  c["head_epochs"] = a.head_epochs;
  c["head_lr"] = a.head_lr;

  FeatureBundle train = synth_dataset(a.synth);
  TrainConfig head_config;
  head_config.learning_rate = a.head_lr;
  head_config.epochs = a.head_epochs;
  head_config.seed = a.synth.seed;
  const ClassifierHead head = train_classifier_head(train, a.synth.classes, head_config);
  relabel_inferred(train, head);
  save(run.output("train.fex"), train);
  save(run.output("head.chd"), head);

  DatasetManifest manifest;
  manifest.bundle_path = "train.fex";
  manifest.head_path = "head.chd";
  for (std::size_t k = 0; k < a.synth.classes; ++k) {
    manifest.class_names.push_back("class_" + std::to_string(k));
  }
  manifest.splits.assign(train.images.size(), Split::kTrain);
  run.write_text("dataset.json", manifest_to_json(manifest));

  Json report;
  report["train_accuracy"] = accuracy(train, head);
  if (a.test_per_class > 0) {
    SynthOptions test_options = a.synth;
    test_options.per_class = a.test_per_class;
    test_options.draw = 1;
    FeatureBundle test = synth_dataset(test_options);
    relabel_inferred(test, head);
    save(run.output("test.fex"), test);
    manifest.bundle_path = "test.fex";
    manifest.splits.assign(test.images.size(), Split::kTest);
    run.write_text("test_dataset.json", manifest_to_json(manifest));
    report["test_accuracy"] = accuracy(test, head);
  }
  run.write_json("report.json", report);
  run.finish();
  out << "train accuracy " << report["train_accuracy"].get<double>() << "\n";
}

struct TrainHeadArgs {
  std::string bundle;
  std::string out;
  bool relabel = false;
  TrainFlags flags;
};

void run_train_head(const TrainHeadArgs& a, std::ostream& out) {
  RunRecord run("train-head", a.out);
  run.input("bundle", a.bundle);
  FeatureBundle bundle = load_feature_bundle(a.bundle);
  const TrainConfig config = a.flags.resolve(TrainConfig{});
  run.config() = to_json(config);
  run.config()["relabel"] = a.relabel;
  const ClassifierHead head = train_classifier_head(bundle, bundle.classes, config);
  save(run.output("head.chd"), head);
  Json report;
  report["train_accuracy"] = accuracy(bundle, head);
  if (a.relabel) {
    relabel_inferred(bundle, head);
    save(run.output("relabeled.fex"), bundle);
  }
  run.write_json("report.json", report);
  run.finish();
  out << "train accuracy " << report["train_accuracy"].get<double>() << "\n";
}

struct TrainExplainerArgs {
  std::string bundle;
  std::string head;
  std::size_t target = 0;
  std::string out;
  TrainFlags flags;
};

void run_train_explainer(const TrainExplainerArgs& a, HeadKind kind, std::ostream& out) {
  const bool mc = kind == HeadKind::kMinimumCorrect;
  RunRecord run(mc ? "train-mc" : "train-mi", a.out);
  run.input("bundle", a.bundle);
  run.input("head", a.head);
  const FeatureBundle bundle = load_feature_bundle(a.bundle);
  const ClassifierHead classifier = load_classifier_head(a.head);
  check_compatible(bundle, classifier);
  const TrainConfig config =
      a.flags.resolve(mc ? TrainConfig::mc_defaults() : TrainConfig::mi_defaults());
  run.config() = to_json(config);
  run.config()["class"] = a.target;

  const auto target = static_cast<std::uint32_t>(a.target);
  const auto epochs = static_cast<std::uint32_t>(config.epochs);
  Json report;
  const std::string name = std::string(mc ? "mc" : "mi") + "_class" + std::to_string(a.target);
  if (mc) {
    const McTrainResult r = train_mc(bundle, classifier, a.target, config);
    save(run.output(name + ".cfe"), to_checkpoint(r.head, target, config.lambda, epochs));
    report = to_json(r.report);
  } else {
    const MiTrainResult r = train_mi(bundle, classifier, a.target, config);
    save(run.output(name + ".cfe"), to_checkpoint(r.head, target, config.lambda, epochs));
    report = to_json(r.report);
  }
  run.write_json("report.json", report);
  run.finish();
  out << name << ": accuracy " << report["final"]["accuracy"].get<double>() << ", "
      << (mc ? "mean filters " : "mean addition l1 ")
      << report["final"][mc ? "mean_filters" : "mean_addition_l1"].get<double>() << "\n";
}

struct ExplainArgs {
  std::string bundle;
  std::string head;
  std::string checkpoint;
  std::string manifest;
  std::size_t image = 0;
  std::size_t topk = 3;
  std::size_t heatmap_size = 224;
  std::string out;
};

void run_explain(const ExplainArgs& a, std::ostream& out) {
  RunRecord run("explain", a.out);
  run.input("bundle", a.bundle);
  run.input("head", a.head);
  run.input("checkpoint", a.checkpoint);
  if (!a.manifest.empty()) run.input("manifest", a.manifest);
  auto& c = run.config();
  c["image"] = a.image;
  c["topk"] = a.topk;
  c["heatmap_size"] = a.heatmap_size;

  const FeatureBundle bundle = load_feature_bundle(a.bundle);
  const ClassifierHead classifier = load_classifier_head(a.head);
  const CfeCheckpoint checkpoint = load_checkpoint(a.checkpoint);
  const ExplanationReport report =
      checkpoint.kind == HeadKind::kMinimumCorrect
          ? explain_mc(a.image, bundle, classifier, checkpoint)
          : explain_mi(a.image, bundle, classifier, checkpoint, checkpoint.target_class);
  Json j = to_json(report);
  const std::vector<std::size_t> top = topk_filters(report, std::max<std::size_t>(a.topk, 1));
  j["top_filters"] = top;
  annotate_names(j, load_class_names(a.manifest), {"inferred", "modified", "target_class"});

  if (bundle.has_spatial()) {
    auto& maps = j["heatmaps"] = Json::array();
    for (std::size_t filter : top) {
      const Heatmap map = rf_heatmap(a.image, bundle, filter, a.heatmap_size, a.heatmap_size);
      const std::string stem =
          "heatmap_img" + std::to_string(a.image) + "_f" + std::to_string(filter);
      run.write_text(stem + ".pgm", to_pgm(map));
      run.write_json(stem + ".json", to_json(map));
      maps.push_back(stem + ".pgm");
    }
  }
  run.write_json("explanation.json", j);
  run.finish();
  out << (report.kind == HeadKind::kMinimumCorrect ? "MC" : "MI") << " image " << a.image << ": "
      << report.active.size() << " filters, modified class " << report.modified.top_class
      << " (p=" << report.modified.top_probability() << ")\n";
}

struct StatsArgs {
  std::string bundle;
  std::string head;
  std::string checkpoint;
  std::optional<std::size_t> class_index;
  std::size_t min_count = 1;
  std::string out;
};

void run_stats(const StatsArgs& a, std::ostream& out) {
  RunRecord run("stats", a.out);
  run.input("bundle", a.bundle);
  run.input("head", a.head);
  run.input("checkpoint", a.checkpoint);
  const FeatureBundle bundle = load_feature_bundle(a.bundle);
  const ClassifierHead classifier = load_classifier_head(a.head);
  const CfeCheckpoint checkpoint = load_checkpoint(a.checkpoint);
  const std::size_t cls = a.class_index.value_or(checkpoint.target_class);
  run.config()["class"] = cls;
  run.config()["min_count"] = a.min_count;
  const FilterStats stats =
      global_filter_stats(bundle, classifier, mc_head_from(checkpoint), cls);
  Json j = to_json(stats);
  j["global_set"] = global_mc_set(stats, a.min_count);
  run.write_json("stats.json", j);
  const std::string table = render_stats_table(stats);
  run.write_text("stats.txt", table);
  run.finish();
  out << table;
}

struct AblateArgs {
  std::string bundle;
  std::string head;
  std::string checkpoint;
  std::optional<std::size_t> class_index;
  std::size_t min_count = 1;
  std::uint64_t seed = 0;
  std::string out;
};

void run_ablate(const AblateArgs& a, std::ostream& out) {
  RunRecord run("ablate", a.out);
  run.input("bundle", a.bundle);
  run.input("head", a.head);
  run.input("checkpoint", a.checkpoint);
  const FeatureBundle bundle = load_feature_bundle(a.bundle);
  const ClassifierHead classifier = load_classifier_head(a.head);
  const CfeCheckpoint checkpoint = load_checkpoint(a.checkpoint);
  const std::size_t cls = a.class_index.value_or(checkpoint.target_class);
  auto& c = run.config();
  c["class"] = cls;
  c["min_count"] = a.min_count;
  c["seed"] = a.seed;
  const FilterStats stats =
      global_filter_stats(bundle, classifier, mc_head_from(checkpoint), cls);
  const std::vector<std::size_t> disabled = global_mc_set(stats, a.min_count);
  const AblationResult result = disable_filters_eval(bundle, classifier, disabled, cls, a.seed);
  run.write_json("ablation.json", to_json(result));
  const std::string table = render_ablation_table(result);
  run.write_text("ablation.txt", table);
  run.finish();
  out << table;
}

struct SweepArgs {
  std::string bundle;
  std::string test_bundle;
  std::string head;
  std::size_t target = 0;
  std::vector<double> lambdas{1.0, 2.0, 4.0};
  std::size_t jobs = 1;
  std::string out;
  TrainFlags flags;
};

void run_sweep(const SweepArgs& a, bool logits_only, std::ostream& out) {
  RunRecord run(logits_only ? "logits-ablate" : "sweep", a.out);
  run.input("bundle", a.bundle);
  run.input("head", a.head);
  if (!a.test_bundle.empty()) run.input("test_bundle", a.test_bundle);
  const FeatureBundle train = load_feature_bundle(a.bundle);
  std::optional<FeatureBundle> test;
  if (!a.test_bundle.empty()) test = load_feature_bundle(a.test_bundle);
  const ClassifierHead classifier = load_classifier_head(a.head);
  check_compatible(train, classifier);
  const TrainConfig config = a.flags.resolve(TrainConfig::mc_defaults());
  run.config() = to_json(config);
  run.config()["class"] = a.target;
  run.config()["jobs"] = a.jobs;
  const FeatureBundle* test_ptr = test ? &*test : nullptr;

  auto save_row = [&](const SweepRow& row, const std::string& stem) {
    run.write_json(stem + ".json", to_json(row));
    save(run.output(stem + ".cfe"),
         to_checkpoint(row.run.head, static_cast<std::uint32_t>(a.target), row.lambda,
                       static_cast<std::uint32_t>(config.epochs)));
  };

  std::string table;
  if (logits_only) {
    const LogitsAblation ablation =
        logits_ablation(train, test_ptr, classifier, a.target, config, a.jobs);
    save_row(ablation.with_logits, "with_logits");
    save_row(ablation.without_logits, "without_logits");
    run.write_json("logits_ablation.json", to_json(ablation));
    table = render_logits_table(ablation);
    run.write_text("logits_ablation.txt", table);
  } else {
    run.config()["lambdas"] = a.lambdas;
    const std::vector<SweepRow> rows =
        sparsity_sweep(train, test_ptr, classifier, a.target, a.lambdas, config, a.jobs);
    Json all = Json::array();
    for (const SweepRow& row : rows) {
      save_row(row, "sweep_lambda_" + format_double(row.lambda));
      all.push_back(to_json(row));
    }
    run.write_json("sweep.json", all);
    table = render_sweep_table(rows);
    run.write_text("sweep.txt", table);
  }
  run.finish();
  out << table;
}

struct MisclassArgs {
  std::string bundle;
  std::string head;
  std::string mc_checkpoint;
  std::string mi_checkpoint;
  std::string manifest;
  std::size_t image = 0;
  std::size_t topk = 3;
  std::string out;
};

void run_misclass(const MisclassArgs& a, std::ostream& out) {
  RunRecord run("misclass", a.out);
  run.input("bundle", a.bundle);
  run.input("head", a.head);
  run.input("mc_checkpoint", a.mc_checkpoint);
  run.input("mi_checkpoint", a.mi_checkpoint);
  if (!a.manifest.empty()) run.input("manifest", a.manifest);
  run.config()["image"] = a.image;
  run.config()["topk"] = a.topk;
  const FeatureBundle bundle = load_feature_bundle(a.bundle);
  const ClassifierHead classifier = load_classifier_head(a.head);
  const McHead mc = mc_head_from(load_checkpoint(a.mc_checkpoint));
  const MiHead mi = mi_head_from(load_checkpoint(a.mi_checkpoint));
  const MisclassificationReport report =
      misclassification_report(a.image, bundle, classifier, mc, mi, a.topk);
  Json j = to_json(report);
  const auto names = load_class_names(a.manifest);
  annotate_names(j["mc"], names, {"inferred", "modified", "true_class"});
  annotate_names(j["mi"], names, {"inferred", "modified", "true_class"});
  run.write_json("misclass.json", j);
  run.finish();
  out << "image " << a.image << ": inferred " << report.mc.inferred_class() << ", true "
      << report.mc.true_class << "; MI recovers class " << report.mi.modified.top_class
      << " with p=" << report.mi.modified.top_probability() << "\n";
}

struct GradCheckArgs {
  std::size_t n = 8;
  std::size_t classes = 3;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  double lambda = 2.0;
  double step = 1e-4;
  double band = 1e-3;
  std::string out;
};

void run_gradcheck(const GradCheckArgs& a, std::ostream& out) {
  RunRecord run("gradcheck", a.out);
  auto& c = run.config();
  c["n"] = a.n;
  c["classes"] = a.classes;
  c["batch"] = a.batch;
  c["seed"] = a.seed;
  c["lambda"] = a.lambda;
  c["step"] = a.step;
  c["band"] = a.band;
  const GradCheckProblem p = make_gradcheck_problem(a.n, a.classes, a.batch, a.seed);
  const auto batch = p.batch();
  const FiniteDiffResult mc =
      check_mc_gradient(batch, p.mc, p.classifier, a.lambda, a.step, a.band);
  const FiniteDiffResult mi =
      check_mi_gradient(batch, p.mi, p.classifier, a.lambda, a.step, a.band);
  auto row = [](const FiniteDiffResult& r) {
    return Json{{"max_relative_error", r.max_relative_error},
                {"checked", r.checked},
                {"excluded", r.excluded}};
  };
  run.write_json("gradcheck.json", Json{{"mc", row(mc)}, {"mi", row(mi)}});
  run.finish();
  out << "mc max relative error " << mc.max_relative_error << " (" << mc.checked
      << " checked)\nmi max relative error " << mi.max_relative_error << " (" << mi.checked
      << " checked)\n";
}

}  // namespace

std::string sha256_file(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed for " + path.string());
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xf]);
  }
  return hex;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Minimum-correct / minimum-incorrect filter explanations for CNN classifiers",
               "cfex"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::function<void()> action;
  auto output_dir = [](CLI::App* sub, std::string& dest) {
    sub->add_option("--out", dest, "output directory")->required();
  };

  GenSynthArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synth", "generate a synthetic bundle and head");
  gen_cmd->add_option("--n", gen.synth.filters, "filters")->capture_default_str();
  gen_cmd->add_option("--classes", gen.synth.classes, "classes")->capture_default_str();
  gen_cmd->add_option("--per-class", gen.synth.per_class, "training images per class")
      ->capture_default_str();
  gen_cmd->add_option("--test-per-class", gen.test_per_class, "test images per class (0 = none)")
      ->capture_default_str();
  gen_cmd->add_option("--separation", gen.synth.separation, "prototype scale")
      ->capture_default_str();
  gen_cmd->add_option("--noise", gen.synth.noise, "noise std")->capture_default_str();
  gen_cmd->add_option("--support", gen.synth.support, "filters per prototype")
      ->capture_default_str();
  gen_cmd->add_option("--visibility", gen.synth.visibility, "chance each prototype filter shows")
      ->capture_default_str();
  gen_cmd->add_option("--spatial", gen.synth.spatial, "spatial map side (0 = none)")
      ->capture_default_str();
  gen_cmd->add_option("--seed", gen.synth.seed, "random seed")->capture_default_str();
  gen_cmd->add_option("--head-epochs", gen.head_epochs, "classifier epochs")
      ->capture_default_str();
  gen_cmd->add_option("--head-lr", gen.head_lr, "classifier learning rate")
      ->capture_default_str();
  output_dir(gen_cmd, gen.out);
  gen_cmd->callback([&] { action = [&] { run_gen_synth(gen, out); }; });

  TrainHeadArgs head_args;
  auto* head_cmd = app.add_subcommand("train-head", "train a softmax head on true labels");
  head_cmd->add_option("--bundle", head_args.bundle, "FEX1 bundle")->required();
  head_cmd->add_flag("--relabel", head_args.relabel, "write the bundle with new inferred labels");
  head_args.flags.attach(head_cmd);
  output_dir(head_cmd, head_args.out);
  head_cmd->callback([&] { action = [&] { run_train_head(head_args, out); }; });

  TrainExplainerArgs mc_args;
  TrainExplainerArgs mi_args;
  for (auto [name, args, kind] :
       {std::tuple{"train-mc", &mc_args, HeadKind::kMinimumCorrect},
        std::tuple{"train-mi", &mi_args, HeadKind::kMinimumIncorrect}}) {
    auto* cmd = app.add_subcommand(name, kind == HeadKind::kMinimumCorrect
                                             ? "train an MC explainer for one class"
                                             : "train an MI explainer toward one alter class");
    cmd->add_option("--bundle", args->bundle, "FEX1 bundle")->required();
    cmd->add_option("--head", args->head, "CHD1 classifier head")->required();
    cmd->add_option("--class", args->target, "target (MC) or alter (MI) class")->required();
    args->flags.attach(cmd);
    output_dir(cmd, args->out);
    cmd->callback([&, args, kind] {
      action = [&, args, kind] { run_train_explainer(*args, kind, out); };
    });
  }

  ExplainArgs ex;
  auto* ex_cmd = app.add_subcommand("explain", "explain one image with a trained head");
  ex_cmd->add_option("--bundle", ex.bundle, "FEX1 bundle")->required();
  ex_cmd->add_option("--head", ex.head, "CHD1 classifier head")->required();
  ex_cmd->add_option("--checkpoint", ex.checkpoint, "CFE1 checkpoint")->required();
  ex_cmd->add_option("--image", ex.image, "image index")->required();
  ex_cmd->add_option("--topk", ex.topk, "filters to visualize")->capture_default_str();
  ex_cmd->add_option("--heatmap-size", ex.heatmap_size, "heatmap side in pixels")
      ->capture_default_str();
  ex_cmd->add_option("--manifest", ex.manifest, "dataset manifest with class names");
  output_dir(ex_cmd, ex.out);
  ex_cmd->callback([&] { action = [&] { run_explain(ex, out); }; });

  StatsArgs st;
  auto* st_cmd = app.add_subcommand("stats", "per-class MC filter statistics");
  st_cmd->add_option("--bundle", st.bundle, "evaluation bundle")->required();
  st_cmd->add_option("--head", st.head, "CHD1 classifier head")->required();
  st_cmd->add_option("--checkpoint", st.checkpoint, "MC checkpoint")->required();
  st_cmd->add_option("--class", st.class_index, "class (default: checkpoint target)");
  st_cmd->add_option("--min-count", st.min_count, "global set threshold")->capture_default_str();
  output_dir(st_cmd, st.out);
  st_cmd->callback([&] { action = [&] { run_stats(st, out); }; });

  AblateArgs ab;
  auto* ab_cmd = app.add_subcommand("ablate", "disable a class's global MC filters");
  ab_cmd->add_option("--bundle", ab.bundle, "evaluation bundle")->required();
  ab_cmd->add_option("--head", ab.head, "CHD1 classifier head")->required();
  ab_cmd->add_option("--checkpoint", ab.checkpoint, "MC checkpoint")->required();
  ab_cmd->add_option("--class", ab.class_index, "class (default: checkpoint target)");
  ab_cmd->add_option("--min-count", ab.min_count, "global set threshold")->capture_default_str();
  ab_cmd->add_option("--seed", ab.seed, "random baseline seed")->capture_default_str();
  output_dir(ab_cmd, ab.out);
  ab_cmd->callback([&] { action = [&] { run_ablate(ab, out); }; });

  SweepArgs sw;
  SweepArgs la;
  for (auto [name, args, logits_only] : {std::tuple{"sweep", &sw, false},
                                         std::tuple{"logits-ablate", &la, true}}) {
    auto* cmd = app.add_subcommand(name, logits_only ? "MC training with and without logits term"
                                                     : "MC sparsity sweep over lambda");
    cmd->add_option("--bundle", args->bundle, "training bundle")->required();
    cmd->add_option("--test-bundle", args->test_bundle, "optional test bundle");
    cmd->add_option("--head", args->head, "CHD1 classifier head")->required();
    cmd->add_option("--class", args->target, "target class")->required();
    if (!logits_only) {
      cmd->add_option("--lambdas", args->lambdas, "comma-separated lambdas")
          ->delimiter(',')
          ->capture_default_str();
    }
    cmd->add_option("--jobs", args->jobs, "parallel training rows")->capture_default_str();
    args->flags.attach(cmd);
    output_dir(cmd, args->out);
    cmd->callback([&, args, logits_only] {
      action = [&, args, logits_only] { run_sweep(*args, logits_only, out); };
    });
  }

  MisclassArgs mis;
  auto* mis_cmd = app.add_subcommand("misclass", "explain a misclassified image");
  mis_cmd->add_option("--bundle", mis.bundle, "FEX1 bundle")->required();
  mis_cmd->add_option("--head", mis.head, "CHD1 classifier head")->required();
  mis_cmd->add_option("--image", mis.image, "image index")->required();
  mis_cmd->add_option("--mc-checkpoint", mis.mc_checkpoint, "MC head for the inferred class")
      ->required();
  mis_cmd->add_option("--mi-checkpoint", mis.mi_checkpoint, "MI head toward the true class")
      ->required();
  mis_cmd->add_option("--topk", mis.topk, "filters per explanation")->capture_default_str();
  mis_cmd->add_option("--manifest", mis.manifest, "dataset manifest with class names");
  output_dir(mis_cmd, mis.out);
  mis_cmd->callback([&] { action = [&] { run_misclass(mis, out); }; });

  GradCheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of both objectives");
  gc_cmd->add_option("--n", gc.n, "filters")->capture_default_str();
  gc_cmd->add_option("--classes", gc.classes, "classes")->capture_default_str();
  gc_cmd->add_option("--batch", gc.batch, "batch size")->capture_default_str();
  gc_cmd->add_option("--seed", gc.seed, "random seed")->capture_default_str();
  gc_cmd->add_option("--lambda", gc.lambda, "sparsity weight")->capture_default_str();
  gc_cmd->add_option("--step", gc.step, "difference step")->capture_default_str();
  gc_cmd->add_option("--band", gc.band, "kink exclusion band")->capture_default_str();
  output_dir(gc_cmd, gc.out);
  gc_cmd->callback([&] { action = [&] { run_gradcheck(gc, out); }; });

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (const CLI::App* s : app.get_subcommands()) sub = s;
    err << (sub != nullptr ? sub->help() : app.help());
    return kUsageError;
  }

  try {
    for (const CLI::App* sub : app.get_subcommands()) {
      const auto* option = sub->get_option_no_throw("--out");
      if (option != nullptr && option->count() > 0) {
        fs::create_directories(option->as<std::string>());
      }
    }
    action();
    return kOk;
  } catch (const DivergenceError& e) {
    err << "error: training diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

}  // namespace cfex::cli
