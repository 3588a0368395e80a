// Operator surface: one binary wiring dataset generation, training,
// localization and evaluation together.
//
// Exit codes: 0 success, 1 validation failure, 2 runtime/numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "aumn/checkpoint.hpp"
#include "aumn/config.hpp"
#include "aumn/data.hpp"
#include "aumn/evaluation.hpp"
#include "aumn/inference.hpp"
#include "aumn/model.hpp"
#include "aumn/parallel.hpp"
#include "aumn/rng.hpp"
#include "aumn/training.hpp"

namespace {

namespace fs = std::filesystem;
using namespace aumn;

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// std::stod rejects subnormal values as out-of-range; strtod keeps them.
double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw ValidationError("not a number: '" + s + "'");
  }
  return v;
}

std::string f6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string stream = "rgb";
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_out, bool with_stream) {
  cmd->add_option("--config", args.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides, "Override a config field as section.key=value");
  cmd->add_option("--seed", args.seed, "Override train.seed and synth.seed");
  if (with_out) {
    cmd->add_option("--out", args.out_dir, "Output directory")->required();
  }
  if (with_stream) {
    cmd->add_option("--stream", args.stream, "Feature stream: rgb, flow or both")
        ->check(CLI::IsMember({"rgb", "flow", "both"}));
  }
}

RunConfig load_config(const CommonArgs& args) {
  std::vector<std::string> overrides = args.overrides;
  if (args.seed) {
    overrides.push_back("train.seed=" + std::to_string(*args.seed));
    overrides.push_back("synth.seed=" + std::to_string(*args.seed));
  }
  return load_run_config(args.config_path.empty() ? fs::path() : fs::path(args.config_path),
                         overrides);
}

std::vector<std::string> stream_list(const std::string& stream) {
  if (stream == "both") return {"rgb", "flow"};
  return {stream};
}

std::vector<TrainingVideo> load_stream_dataset(const DatasetManifest& manifest,
                                               const std::string& stream,
                                               const ModelDims& dims) {
  if (manifest.num_classes != dims.C) {
    throw ValidationError("manifest has " + std::to_string(manifest.num_classes) +
                          " classes but the model expects C=" + std::to_string(dims.C));
  }
  std::vector<TrainingVideo> videos(manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const VideoRecord& rec = manifest.records[i];
    videos[i].video_id = rec.video_id;
    videos[i].features = read_stream_features(manifest, rec, stream);
    videos[i].label = rec.label;
    if (videos[i].features.cols() != dims.D) {
      throw ValidationError("record '" + rec.video_id + "' has feature dim " +
                            std::to_string(videos[i].features.cols()) + ", model expects D=" +
                            std::to_string(dims.D));
    }
  }
  return videos;
}

void write_loss_csv(const fs::path& path, const std::vector<HistoryRow>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  out << "step,L_cls,L_d,L_h,L_s,total\n";
  for (const HistoryRow& row : history) {
    out << row.step << ',' << g17(row.components.cls) << ',' << g17(row.components.diversity)
        << ',' << g17(row.components.homogeneity) << ',' << g17(row.components.sparsity) << ','
        << g17(row.components.total) << '\n';
  }
}

int run_synth(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  DatasetManifest manifest = generate_synthetic(cfg.synth.spec, out);

  DatasetManifest train_split = manifest;
  DatasetManifest test_split = manifest;
  train_split.records.assign(manifest.records.begin(),
                             manifest.records.begin() + cfg.synth.videos_train);
  test_split.records.assign(manifest.records.begin() + cfg.synth.videos_train,
                            manifest.records.end());
  save_manifest(train_split, out / "manifest_train.json");
  save_manifest(test_split, out / "manifest_test.json");

  Index action = 0, total = 0;
  for (const VideoRecord& rec : manifest.records) {
    for (int v : rec.segment_labels) action += v;
    total += static_cast<Index>(rec.segment_labels.size());
  }
  std::cout << "wrote " << train_split.records.size() << " train / " << test_split.records.size()
            << " test videos to " << out.string() << " (action fraction "
            << f6(static_cast<double>(action) / static_cast<double>(total)) << ")\n";
  return 0;
}

int run_train(const CommonArgs& args, const std::string& data_path) {
  const RunConfig cfg = load_config(args);
  const DatasetManifest manifest = load_manifest(data_path);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  for (const std::string& stream : stream_list(args.stream)) {
    TrainConfig tc = cfg.train;
    tc.weights = stream_weights(cfg, stream);
    const std::vector<TrainingVideo> videos = load_stream_dataset(manifest, stream, cfg.model);
    TrainResult result = train(videos, cfg.model, tc, cfg.parallelism);
    save_checkpoint(out / ("checkpoint_" + stream + ".aumn"), cfg.model, result.params);
    write_loss_csv(out / ("loss_" + stream + ".csv"), result.history);
    std::cout << stream << ": " << result.history.size() << " steps, final total loss "
              << g17(result.history.empty() ? 0.0 : result.history.back().components.total)
              << "\n";
  }
  return 0;
}

int run_gradcheck(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  const GradcheckSection& gc = cfg.gradcheck;
  TrainConfig tc = cfg.train;
  tc.flags = AblationFlags{};  // audit every loss path

  std::map<std::string, Real> worst;
  Real worst_overall = 0;
  for (Index inst = 0; inst < gc.instances; ++inst) {
    const std::uint64_t seed = cfg.train.seed + static_cast<std::uint64_t>(inst);
    const AuditInstance instance = make_audit_instance(gc.dims, gc.segments, gc.batch, seed);
    const FdReport report = finite_difference_check(instance.params, gc.dims, instance.items(),
                                                    tc, gc.h, gc.tolerance);
    for (const auto& row : report.tensors) {
      worst[row.name] = std::max(worst[row.name], row.max_rel_error);
    }
    worst_overall = std::max(worst_overall, report.max_rel_error);
  }
  std::cout << "finite-difference audit over " << gc.instances << " instances (h=" << gc.h
            << ", tolerance=" << gc.tolerance << ")\n";
  for (const auto& [name, err] : worst) {
    std::cout << "  " << name << "\tmax_rel_error=" << g17(err) << "\n";
  }
  const bool pass = worst_overall < gc.tolerance;
  std::cout << (pass ? "PASS" : "FAIL") << " max_rel_error=" << g17(worst_overall) << "\n";
  return pass ? 0 : 2;
}

struct StreamModel {
  ModelDims dims;
  ModelParams params;
};

int run_infer(const CommonArgs& args, const std::string& data_path,
              const std::string& model_dir) {
  const RunConfig cfg = load_config(args);
  const DatasetManifest manifest = load_manifest(data_path);
  const fs::path out(args.out_dir);
  fs::create_directories(out);

  const std::vector<std::string> streams = stream_list(args.stream);
  std::vector<StreamModel> models;
  for (const std::string& stream : streams) {
    const fs::path ckpt = fs::path(model_dir) / ("checkpoint_" + stream + ".aumn");
    auto [dims, params] = load_checkpoint(ckpt);
    models.push_back({dims, std::move(params)});
  }

  struct VideoOutput {
    std::vector<Proposal> proposals;
    Vector attention;
  };
  std::vector<VideoOutput> outputs(manifest.records.size());
  parallel_for(static_cast<Index>(manifest.records.size()), cfg.parallelism, [&](Index i) {
    const VideoRecord& rec = manifest.records[static_cast<std::size_t>(i)];
    std::vector<ForwardTrace> traces;
    for (std::size_t s = 0; s < streams.size(); ++s) {
      const Matrix x = read_stream_features(manifest, rec, streams[s]);
      traces.push_back(forward(x, models[s].params, models[s].dims,
                               cfg.train.flags.self_attention));
    }
    VideoOutput& vo = outputs[static_cast<std::size_t>(i)];
    vo.proposals = localize(traces, cfg.inference);
    vo.attention = traces.front().a;
    for (std::size_t s = 1; s < traces.size(); ++s) vo.attention += traces[s].a;
    vo.attention /= static_cast<Real>(traces.size());
  });

  const Real ss = cfg.inference.segment_seconds;
  std::ofstream props(out / "proposals.tsv");
  if (!props) throw IoError("cannot open " + (out / "proposals.tsv").string());
  props << "# video_id\tclass_id\tstart_segment\tend_segment\tstart_seconds\tend_seconds\tscore\n";
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    for (const Proposal& p : outputs[i].proposals) {
      props << manifest.records[i].video_id << '\t' << p.class_id << '\t' << p.start << '\t'
            << p.end << '\t' << g17(static_cast<Real>(p.start) * ss) << '\t'
            << g17(static_cast<Real>(p.end) * ss) << '\t' << g17(p.score) << '\n';
    }
  }

  const bool have_labels = !manifest.records.empty() &&
                           std::all_of(manifest.records.begin(), manifest.records.end(),
                                       [](const VideoRecord& r) {
                                         return !r.segment_labels.empty();
                                       });
  if (have_labels) {
    std::ofstream attn(out / "attention.tsv");
    if (!attn) throw IoError("cannot open " + (out / "attention.tsv").string());
    attn << "# video_id\tsegment\tattention\n";
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
      const Vector& a = outputs[i].attention;
      for (Index t = 0; t < a.size(); ++t) {
        attn << manifest.records[i].video_id << '\t' << t << '\t' << g17(a(t)) << '\n';
      }
    }
  }
  std::size_t total = 0;
  for (const VideoOutput& vo : outputs) total += vo.proposals.size();
  std::cout << "wrote " << total << " proposals for " << manifest.records.size() << " videos\n";
  return 0;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) fields.push_back(field);
  return fields;
}

std::vector<DetectionRecord> read_proposals(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<DetectionRecord> dets;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 7) {
      throw ValidationError("proposal file " + path.string() + ": expected 7 columns, got " +
                            std::to_string(fields.size()));
    }
    DetectionRecord det;
    det.video_id = fields[0];
    det.prop.class_id = std::stoi(fields[1]);
    det.prop.start = std::stol(fields[2]);
    det.prop.end = std::stol(fields[3]);
    det.prop.score = parse_double(fields[6]);
    dets.push_back(std::move(det));
  }
  return dets;
}

int run_eval(const CommonArgs& args, const std::string& data_path,
             const std::string& proposals_path, const std::string& attention_path) {
  const RunConfig cfg = load_config(args);
  const DatasetManifest manifest = load_manifest(data_path);
  const std::vector<GroundTruthInstance> gt = all_ground_truth(manifest);
  const std::vector<DetectionRecord> dets = read_proposals(proposals_path);
  const MeanApResult result = mean_ap(dets, gt, cfg.eval_iou_thresholds);
  for (int c : result.skipped_classes) {
    std::cerr << "warning: class " << c
              << " has proposals but no ground truth; excluded from mAP\n";
  }

  const fs::path out(args.out_dir);
  fs::create_directories(out);
  std::ofstream report(out / "report.tsv");
  if (!report) throw IoError("cannot open " + (out / "report.tsv").string());
  for (std::size_t i = 0; i < result.thresholds.size(); ++i) {
    report << "mAP@" << result.thresholds[i] << (i + 1 < result.thresholds.size() ? "\t" : "");
  }
  report << "\tAVG\n";
  for (std::size_t i = 0; i < result.map_values.size(); ++i) {
    report << f6(result.map_values[i]) << (i + 1 < result.map_values.size() ? "\t" : "");
  }
  report << "\t" << f6(result.average) << "\n";

  if (!attention_path.empty()) {
    std::ifstream in(attention_path);
    if (!in) throw IoError("cannot open " + attention_path);
    std::map<std::string, std::vector<Real>> per_video;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto fields = split_tabs(line);
      if (fields.size() != 3) {
        throw ValidationError("attention file: expected 3 columns");
      }
      per_video[fields[0]].push_back(parse_double(fields[2]));
    }
    std::vector<Real> scores;
    std::vector<int> labels;
    for (const VideoRecord& rec : manifest.records) {
      const auto it = per_video.find(rec.video_id);
      if (it == per_video.end() || rec.segment_labels.empty()) continue;
      if (it->second.size() != rec.segment_labels.size()) {
        throw ValidationError("attention for '" + rec.video_id +
                              "' does not match segment_labels length");
      }
      scores.insert(scores.end(), it->second.begin(), it->second.end());
      labels.insert(labels.end(), rec.segment_labels.begin(), rec.segment_labels.end());
    }
    const Vector a = Eigen::Map<const Vector>(scores.data(), static_cast<Index>(scores.size()));
    const auto auc = attention_auc(a, labels);
    if (auc) {
      report << "attention_auc\t" << f6(*auc) << "\n";
    } else {
      report << "attention_auc\tundefined\n";
    }
  }
  std::cout << "AVG mAP " << f6(result.average) << "\n";
  return 0;
}

int run_ablate(const CommonArgs& args, const std::string& train_path,
               const std::string& test_path) {
  const RunConfig cfg = load_config(args);
  const std::string stream = args.stream == "both" ? "rgb" : args.stream;
  const DatasetManifest train_manifest = load_manifest(train_path);
  const DatasetManifest test_manifest = load_manifest(test_path);
  const std::vector<TrainingVideo> train_videos =
      load_stream_dataset(train_manifest, stream, cfg.model);
  const std::vector<GroundTruthInstance> gt = all_ground_truth(test_manifest);

  struct Row {
    const char* label;
    bool sparsity, diversity, homogeneity, self_attention;
  };
  const std::vector<Row> rows = {
      {"baseline", false, false, false, false}, {"+Ls", true, false, false, false},
      {"+Ls+Ld", true, true, false, false},     {"+Ls+Lh", true, false, true, false},
      {"+Ls+Ld+Lh", true, true, true, false},   {"full", true, true, true, true},
  };

  const fs::path out(args.out_dir);
  fs::create_directories(out);
  std::ofstream table(out / "ablation.tsv");
  if (!table) throw IoError("cannot open " + (out / "ablation.tsv").string());
  table << "config\tL_s\tL_d\tL_h\tS";
  for (Real thr : cfg.eval_iou_thresholds) table << "\tmAP@" << thr;
  table << "\tAVG\n";

  for (const Row& row : rows) {
    TrainConfig tc = cfg.train;
    tc.weights = stream_weights(cfg, stream);
    tc.flags.sparsity = row.sparsity;
    tc.flags.diversity = row.diversity;
    tc.flags.homogeneity = row.homogeneity;
    tc.flags.self_attention = row.self_attention;
    std::cerr << "ablate: training " << row.label << "\n";
    TrainResult trained = train(train_videos, cfg.model, tc, cfg.parallelism);

    std::vector<std::vector<Proposal>> proposals(test_manifest.records.size());
    parallel_for(static_cast<Index>(test_manifest.records.size()), cfg.parallelism,
                 [&](Index i) {
                   const VideoRecord& rec = test_manifest.records[static_cast<std::size_t>(i)];
                   const Matrix x = read_stream_features(test_manifest, rec, stream);
                   const ForwardTrace trace =
                       forward(x, trained.params, cfg.model, tc.flags.self_attention);
                   proposals[static_cast<std::size_t>(i)] = localize({trace}, cfg.inference);
                 });
    std::vector<DetectionRecord> dets;
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      for (const Proposal& p : proposals[i]) {
        dets.push_back({test_manifest.records[i].video_id, p});
      }
    }
    const MeanApResult result = mean_ap(dets, gt, cfg.eval_iou_thresholds);
    table << row.label << '\t' << (row.sparsity ? 1 : 0) << '\t' << (row.diversity ? 1 : 0)
          << '\t' << (row.homogeneity ? 1 : 0) << '\t' << (row.self_attention ? 1 : 0);
    for (Real v : result.map_values) table << '\t' << f6(v);
    table << '\t' << f6(result.average) << '\n';
    table.flush();
  }
  std::cout << "wrote " << (out / "ablation.tsv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Action-unit memory network for weakly supervised temporal localization"};
  app.require_subcommand(1);

  CommonArgs synth_args, train_args, gradcheck_args, infer_args, eval_args, ablate_args;
  std::string train_data, infer_data, infer_model, eval_data, eval_proposals, eval_attention;
  std::string ablate_train, ablate_test;

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_common(synth, synth_args, true, false);

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model per stream");
  add_common(train_cmd, train_args, true, true);
  train_cmd->add_option("--data", train_data, "Training manifest")
      ->required()
      ->check(CLI::ExistingFile);

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  add_common(gradcheck, gradcheck_args, false, false);

  CLI::App* infer = app.add_subcommand("infer", "Localize actions with a trained model");
  add_common(infer, infer_args, true, true);
  infer->add_option("--data", infer_data, "Manifest to localize")
      ->required()
      ->check(CLI::ExistingFile);
  infer->add_option("--model", infer_model, "Directory with checkpoint_<stream>.aumn files")
      ->required()
      ->check(CLI::ExistingDirectory);

  CLI::App* eval = app.add_subcommand("eval", "Score proposals against ground truth");
  add_common(eval, eval_args, true, false);
  eval->add_option("--data", eval_data, "Manifest with ground truth")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--proposals", eval_proposals, "Proposal file from infer")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--attention", eval_attention, "Attention file from infer (adds ROC AUC)")
      ->check(CLI::ExistingFile);

  CLI::App* ablate = app.add_subcommand("ablate", "Loss/self-attention toggle grid");
  add_common(ablate, ablate_args, true, true);
  ablate->add_option("--data", ablate_train, "Training manifest")
      ->required()
      ->check(CLI::ExistingFile);
  ablate->add_option("--test", ablate_test, "Evaluation manifest")
      ->required()
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return run_synth(synth_args);
    if (*train_cmd) return run_train(train_args, train_data);
    if (*gradcheck) return run_gradcheck(gradcheck_args);
    if (*infer) return run_infer(infer_args, infer_data, infer_model);
    if (*eval) return run_eval(eval_args, eval_data, eval_proposals, eval_attention);
    if (*ablate) return run_ablate(ablate_args, ablate_train, ablate_test);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
