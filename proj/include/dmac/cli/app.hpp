#pragma once

// The dmac command line. Each subcommand writes its outputs plus
// run_manifest.json (resolved options) into one output directory.
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime or
// numeric failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dmac/cli/verification.hpp"
#include "dmac/datagen/generate.hpp"
#include "dmac/datagen/ingest.hpp"
#include "dmac/metrics/evaluate.hpp"
#include "dmac/trainer/trainer.hpp"

#ifndef DMAC_TRAIN_SCALAR
#define DMAC_TRAIN_SCALAR float
#endif

namespace dmac::cli {

namespace fs = std::filesystem;
using Scalar = DMAC_TRAIN_SCALAR;

enum ExitCode : int { kOk = 0, kInvalid = 1, kFailure = 2 };

// $DMAC_OUTPUT_ROOT, or ./runs.
inline fs::path output_root() {
  if (const char* r = std::getenv("DMAC_OUTPUT_ROOT"); r && *r) return r;
  return "runs";
}

namespace detail {

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

// Every option of `sub` with a long name, as given (flag or config file)
// or as defaulted.
inline nlohmann::json resolved_options(const CLI::App& sub) {
  nlohmann::json j = nlohmann::json::object();
  for (const CLI::Option* o : sub.get_options()) {
    const std::string name = o->get_single_name();
    if (o->get_lnames().empty() || name == "help" || name == "config") continue;
    if (o->count() > 0) {
      const auto& r = o->results();
      j[name] = r.size() == 1 ? nlohmann::json(r[0]) : nlohmann::json(r);
    } else {
      const std::string d = o->get_default_str();
      j[name] = d.empty() ? nlohmann::json(nullptr) : nlohmann::json(d);
    }
  }
  return j;
}

inline void write_run_manifest(const fs::path& dir, const CLI::App& sub, const nlohmann::json& extra = {}) {
  fs::create_directories(dir);
  nlohmann::json j = {{"command", sub.get_name()},
                      {"output_dir", dir.string()},
                      {"options", resolved_options(sub)},
                      {"scalar", sizeof(Scalar) == 4 ? "f32" : "f64"}};
  if (!extra.is_null()) j["results"] = extra;
  std::ofstream f(dir / "run_manifest.json", std::ios::binary);
  f << j.dump(2) << '\n';
  if (!f) throw IoError("cannot write '" + (dir / "run_manifest.json").string() + "'");
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::binary);
  f << j.dump(2) << '\n';
  if (!f) throw IoError("cannot write '" + path.string() + "'");
}

inline std::string ckpt_name(std::uint64_t iteration) {
  std::ostringstream s;
  s << "ckpt-" << std::setw(6) << std::setfill('0') << iteration << ".ckpt";
  return s.str();
}

// Keeps log lines of `phase` from before `from`, so a resumed run does not
// repeat the iterations it replays.
inline void truncate_log(const fs::path& path, const std::string& phase, std::uint64_t from) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> keep;
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    if (j.value("phase", "") == phase && j.value("iteration", std::uint64_t{0}) >= from) continue;
    keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

// Bilinear resampling of a probability map, pixel centres aligned.
inline std::vector<double> resize_map(const std::vector<double>& src, std::size_t w, std::size_t h, std::size_t W,
                                      std::size_t H) {
  if (w == W && h == H) return src;
  std::vector<double> out(W * H);
  for (std::size_t y = 0; y < H; ++y) {
    const double sy = std::clamp((y + 0.5) * h / H - 0.5, 0.0, double(h - 1));
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (std::size_t x = 0; x < W; ++x) {
      const double sx = std::clamp((x + 0.5) * w / W - 0.5, 0.0, double(w - 1));
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      const double top = src[y0 * w + x0] * (1 - fx) + src[y0 * w + x1] * fx;
      const double bot = src[y1 * w + x0] * (1 - fx) + src[y1 * w + x1] * fx;
      out[y * W + x] = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

// Inputs that are not equal squares with a multiple of the network size are
// resized to the canvas first; masks come back at each input's own size.
template <typename S>
metrics::PairPrediction predict_any(const core::DmacNet<S>& net, const data::Image& probe, const data::Image& donor) {
  const std::size_t N = net.config().input_size;
  const bool direct = probe.width == probe.height && probe.width == donor.width && donor.width == donor.height &&
                      probe.width % N == 0;
  if (direct) return metrics::predict_pair(net, probe, donor);
  const std::size_t C = data::kCanvas;
  auto p = metrics::predict_pair(net, data::resize_bilinear(probe, C, C), data::resize_bilinear(donor, C, C));
  metrics::PairPrediction out;
  out.width = probe.width;
  out.height = probe.height;
  out.tampered_a = resize_map(p.tampered_a, C, C, probe.width, probe.height);
  out.tampered_b = resize_map(p.tampered_b, C, C, donor.width, donor.height);
  return out;
}

struct TrainFlags {
  std::string preset = "toy";
  fs::path data, out, resume;
  std::optional<std::size_t> batch_size, iterations, epochs, k;
  std::size_t checkpoint_every = 0, log_every = 10;
  std::optional<double> lr, lr_g, lr_adv, lambda_det, lambda_dis;
  std::optional<std::string> variant;
  bool dis_all_pairs = false;
  std::uint64_t seed = 1;

  train::TrainConfig config() const {
    auto c = train::TrainConfig::from_preset(preset);
    c.seed = seed;
    c.checkpoint_every = checkpoint_every;
    if (batch_size) c.batch_size = *batch_size;
    if (iterations) c.iterations = *iterations;
    if (epochs) c.epochs = *epochs;
    if (k) c.k = *k;
    if (lr) c.lr_pretrain = *lr;
    if (lr_g) c.lr_g = *lr_g;
    if (lr_adv) c.lr_adv = *lr_adv;
    if (lambda_det) c.lambda_det = *lambda_det;
    if (lambda_dis) c.lambda_dis = *lambda_dis;
    if (variant) c.variant = adversary::parse_variant(*variant);
    if (dis_all_pairs) c.dis_positive_only = false;
    c.validate();
    return c;
  }
};

inline void add_train_options(CLI::App* sub, TrainFlags& f, bool adversarial) {
  sub->add_option("--config", "JSON file of option values; command-line flags take precedence");
  sub->add_option("--data", f.data, "Generated set (directory with manifest.jsonl)")->required();
  sub->add_option("--preset", f.preset, "Resolution and schedule preset")->check(CLI::IsMember({"toy", "paper"}));
  sub->add_option("--batch-size", f.batch_size, "Pairs per minibatch");
  sub->add_option("--iterations", f.iterations, "Total iterations of this phase, counted across resumes");
  sub->add_option("--epochs", f.epochs, "Passes over the data; overrides --iterations when nonzero");
  sub->add_option("--checkpoint-every", f.checkpoint_every,
                  "Write a checkpoint every N iterations (0: only at the end)");
  sub->add_option("--log-every", f.log_every, "Print progress every N iterations");
  sub->add_option("--seed", f.seed, "Initialization and sampling seed");
  if (!adversarial) {
    sub->add_option("--lr", f.lr, "Adadelta learning rate");
    sub->add_option("--resume", f.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
    return;
  }
  sub->add_option("--checkpoint,--resume", f.resume, "Pretrained or adversarial checkpoint to continue from")
      ->check(CLI::ExistingFile);
  sub->add_option("--lr-g", f.lr_g, "Adam learning rate of the matching network");
  sub->add_option("--lr-adv", f.lr_adv, "Adam learning rate of the verifier and the critic");
  sub->add_option("--lambda-det", f.lambda_det, "Verifier loss weight");
  sub->add_option("--lambda-dis", f.lambda_dis, "Critic loss weight");
  sub->add_option("--k", f.k, "Verifier/critic rounds per matching-network update");
  sub->add_option("--variant", f.variant, "Critic loss")->check(CLI::IsMember({"bce", "hinge"}));
  sub->add_flag("--dis-all-pairs", f.dis_all_pairs, "Train the critic on uncorrelated pairs as well");
}

// Splices the options of a JSON config file (`--config FILE` after the
// subcommand) into the argument list. Keys are long option names; a key
// whose option is already on the command line is skipped.
inline void expand_config(std::vector<std::string>& args) {
  std::size_t at = args.size();
  std::string file;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      at = i, file = args[i + 1];
      break;
    }
    if (args[i].starts_with("--config=")) {
      at = i, file = args[i].substr(9);
      break;
    }
  }
  if (at == args.size()) return;
  std::ifstream in(file);
  if (!in) throw IoError("cannot read config file '" + file + "'");
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ParseError("config file '" + file + "' is not a JSON object");
  auto given = [&](const std::string& flag) {
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == flag || a.starts_with(flag + "="); });
  };
  auto scalar = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  std::vector<std::string> extra;
  for (const auto& [key, v] : j.items()) {
    const std::string flag = "--" + key;
    if (given(flag)) continue;
    if (v.is_boolean()) {
      if (v.get<bool>()) extra.push_back(flag);
    } else if (v.is_array()) {
      std::string joined;
      for (const auto& e : v) joined += (joined.empty() ? "" : ",") + scalar(e);
      extra.insert(extra.end(), {flag, joined});
    } else if (!v.is_null()) {
      extra.insert(extra.end(), {flag, scalar(v)});
    }
  }
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), extra.begin(), extra.end());
}

inline void print_step(std::ostream& out, const train::StepRecord& r) {
  out << r.phase << ' ' << (r.iteration + 1) << " ce " << std::setprecision(5) << r.ce;
  if (r.phase == "adversarial") {
    out << " det_g " << r.det_g << " dis_g " << r.dis_g << " total " << r.total << " sigma " << r.max_sigma;
  }
  out << " (" << std::setprecision(3) << r.seconds << " s)\n";
}

inline int run_training(const CLI::App& sub, const TrainFlags& f, bool adversarial, Streams io) {
  const auto cfg = f.config();
  const auto data = train::load_dataset(f.data, core::DmacConfig::from_preset(cfg.preset));
  if (data.empty()) throw ValidationError("no pairs in '" + f.data.string() + "'");
  train::Trainer<Scalar> t(cfg, data);
  if (!f.resume.empty()) t.restore(train::load_checkpoint(f.resume));
  if (adversarial && f.resume.empty()) {
    io.err << "warning: adversarial training from random initialization (no --checkpoint)\n";
  }

  const std::string phase = adversarial ? "adversarial" : "pretrain";
  const std::uint64_t total = cfg.iterations_for(data.size());
  auto done = [&] { return adversarial ? t.adversarial_iterations() : t.pretrain_iterations(); };
  fs::create_directories(f.out);
  const nlohmann::json run = {
      {"pairs", data.size()}, {"iterations", total}, {"start", done()}, {"config", train::to_json(cfg)}};
  write_run_manifest(f.out, sub, run);
  const fs::path log_path = f.out / "log.jsonl";
  if (f.resume.empty()) fs::remove(log_path);
  else truncate_log(log_path, phase, done());
  std::ofstream log(log_path, std::ios::app | std::ios::binary);

  train::StepRecord last;
  while (done() < total) {
    last = adversarial ? t.adversarial_step() : t.pretrain_step();
    log << last.to_json().dump() << '\n' << std::flush;
    const auto it = done();
    if (f.log_every && (it % f.log_every == 0 || it == total)) print_step(io.out, last);
    if (cfg.checkpoint_every && it % cfg.checkpoint_every == 0) {
      train::save_checkpoint(t.checkpoint(), f.out / ckpt_name(it));
    }
  }
  train::save_checkpoint(t.checkpoint(), f.out / "final.ckpt");
  io.out << phase << " finished at iteration " << done() << "; checkpoint " << (f.out / "final.ckpt").string()
         << '\n';
  return kOk;
}

inline void print_summary(std::ostream& out, const metrics::Summary& s) {
  auto opt = [](const std::optional<double>& v) {
    std::ostringstream o;
    if (v) o << std::fixed << std::setprecision(4) << *v;
    else o << "n/a";
    return o.str();
  };
  out << std::fixed << std::setprecision(4);
  out << "pairs " << s.pairs << ", errors " << s.errors << '\n';
  out << "group       masks     IoU     MCC     NMM\n";
  auto row = [&](const std::string& name, const metrics::LocalizationMeans& m) {
    out << std::left << std::setw(10) << name << std::right << std::setw(7) << m.masks << std::setw(8) << m.iou
        << std::setw(8) << m.mcc << std::setw(8) << m.nmm << '\n';
  };
  row("all", s.overall);
  for (const auto& [k, v] : s.by_difficulty) row(k, v);
  out << "AUC " << opt(s.auc) << "  EER " << opt(s.eer) << "  precision " << s.detection.precision << "  recall "
      << s.detection.recall << "  F1 " << s.detection.f1 << " (threshold " << s.threshold << ")\n";
  out << std::defaultfloat;
}

}  // namespace detail

// Parses and runs one command. Never throws; errors are reported on `err`.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  detail::Streams io{out, err};
  CLI::App app{"Constrained image splicing detection and localization"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  // gen
  std::string kind = "combination";
  std::vector<std::size_t> counts;
  std::uint64_t gen_seed = 0;
  fs::path gen_out, sources;
  auto* gen = app.add_subcommand("gen", "Generate a splicing set");
  gen->add_option("--config", "JSON file of option values; command-line flags take precedence");
  gen->add_option("--kind", kind, "Set kind, or 'all' for one directory per kind")
      ->check(CLI::IsMember({"combination", "raw", "shift", "rotation", "scale", "luminance", "deformation", "all"}));
  gen->add_option("--counts", counts, "Triplets per difficulty: difficult,normal,easy")
      ->delimiter(',')
      ->expected(3)
      ->required();
  gen->add_option("--seed", gen_seed, "Generation seed");
  gen->add_option("--sources", sources, "Annotated source images (PNG + .regions sidecars)")
      ->check(CLI::ExistingDirectory);
  gen->add_option("--out", gen_out, "Output directory");

  detail::TrainFlags pre_flags, adv_flags;
  auto* pretrain = app.add_subcommand("pretrain", "Train the matching network on cross entropy");
  detail::add_train_options(pretrain, pre_flags, false);
  pretrain->add_option("--out", pre_flags.out, "Output directory");
  auto* advtrain = app.add_subcommand("advtrain", "Adversarial training with verifier and critic");
  detail::add_train_options(advtrain, adv_flags, true);
  advtrain->add_option("--out", adv_flags.out, "Output directory");

  fs::path eval_ckpt, eval_data, eval_out;
  double threshold = 0.5;
  bool dump_masks = false;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a generated set");
  eval->add_option("--config", "JSON file of option values; command-line flags take precedence");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "Generated set")->required();
  eval->add_option("--threshold", threshold, "Mask binarization and detection threshold")
      ->check(CLI::Range(0.0, 1.0));
  eval->add_flag("--dump-masks", dump_masks, "Write predicted masks as gray PNGs");
  eval->add_option("--out", eval_out, "Output directory");

  fs::path inf_ckpt, probe_path, donor_path, inf_out;
  auto* infer = app.add_subcommand("infer", "Predict the masks of one image pair");
  infer->add_option("--config", "JSON file of option values; command-line flags take precedence");
  infer->add_option("--checkpoint", inf_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--probe", probe_path, "Probe image (PNG)")->required()->check(CLI::ExistingFile);
  infer->add_option("--donor", donor_path, "Donor image (PNG)")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", inf_out, "Output directory");

  SuiteOptions suite;
  bool no_model = false;
  fs::path gc_out;
  auto* gradcheck = app.add_subcommand("gradcheck", "Gradient and correlation self-verification");
  gradcheck->add_option("--config", "JSON file of option values; command-line flags take precedence");
  gradcheck->add_option("--seeds", suite.seeds, "Random instances per op");
  gradcheck->add_option("--op-tolerance", suite.op_tolerance, "Relative error bound for single ops");
  gradcheck->add_option("--model-tolerance", suite.model_tolerance, "Relative error bound for the full losses");
  gradcheck->add_option("--seed", suite.seed, "Seed");
  gradcheck->add_flag("--no-model", no_model, "Skip the full-loss checks");
  gradcheck->add_flag("--inject-wrong-sign", suite.inject_wrong_sign, "Add an op with a deliberately wrong adjoint");
  gradcheck->add_option("--out", gc_out, "Output directory");

  std::vector<std::string> args(argv, argv + argc);
  try {
    detail::expand_config(args);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  }
  try {
    args.erase(args.begin());
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInvalid;
  }

  auto default_out = [](fs::path& p, const char* name) {
    if (p.empty()) p = output_root() / name;
  };

  try {
    if (gen->parsed()) {
      default_out(gen_out, "gen");
      data::IngestReport report;
      data::SetOptions opt;
      opt.counts = {counts[0], counts[1], counts[2]};
      opt.seed = gen_seed;
      if (!sources.empty()) {
        report = data::ingest_annotations(sources);
        for (const auto& m : report.messages) err << m << '\n';
        std::size_t usable = 0;
        for (const auto& s : report.images) usable += !s.regions.empty();
        if (usable == 0) throw ValidationError("no source image in '" + sources.string() + "' has a usable region");
        opt.sources = &report.images;
      }
      std::vector<data::SetKind> kinds;
      if (kind == "all") {
        kinds = {data::SetKind::Combination, data::SetKind::Raw,       data::SetKind::Shift,
                 data::SetKind::Rotation,    data::SetKind::Scale,     data::SetKind::Luminance,
                 data::SetKind::Deformation};
      } else {
        kinds = {data::parse_set_kind(kind)};
      }
      nlohmann::json results = nlohmann::json::object();
      for (auto k : kinds) {
        opt.kind = k;
        const fs::path dir = kind == "all" ? gen_out / data::to_string(k) : gen_out;
        const auto stats = data::write_set(dir, opt);
        results[data::to_string(k)] = data::set_summary(opt, stats);
        out << "wrote " << 3 * stats.triplets << " " << data::to_string(k) << " pairs to " << dir.string() << " ("
            << stats.transform_redraws << " transform redraws)\n";
      }
      detail::write_run_manifest(gen_out, *gen, results);
      return kOk;
    }
    if (pretrain->parsed()) {
      default_out(pre_flags.out, "pretrain");
      return detail::run_training(*pretrain, pre_flags, false, io);
    }
    if (advtrain->parsed()) {
      default_out(adv_flags.out, "advtrain");
      return detail::run_training(*advtrain, adv_flags, true, io);
    }
    if (eval->parsed()) {
      default_out(eval_out, "eval");
      const auto net = train::load_dmac<Scalar>(train::load_checkpoint(eval_ckpt));
      metrics::EvalOptions opt;
      opt.threshold = threshold;
      if (dump_masks) opt.dump_dir = eval_out / "masks";
      const auto rep = metrics::evaluate_manifest(eval_data, metrics::model_predictor(*net), opt);
      fs::create_directories(eval_out);
      metrics::write_report(eval_out / "report.jsonl", rep);
      detail::write_run_manifest(eval_out, *eval, rep.summary.to_json());
      for (const auto& r : rep.rows) {
        if (!r.ok()) err << "warning: " << r.id << ": " << r.error << '\n';
      }
      detail::print_summary(out, rep.summary);
      return kOk;
    }
    if (infer->parsed()) {
      default_out(inf_out, "infer");
      const auto net = train::load_dmac<Scalar>(train::load_checkpoint(inf_ckpt));
      const auto probe = data::read_png_rgb(probe_path), donor = data::read_png_rgb(donor_path);
      const auto p = detail::predict_any(*net, probe, donor);
      const double score = metrics::detection_score(p.tampered_a, p.tampered_b);
      fs::create_directories(inf_out);
      metrics::write_mask_pngs(p, inf_out / "probe_mask.png", inf_out / "donor_mask.png");
      // The donor mask has the donor's size, which may differ from the probe's.
      if (donor.width != probe.width || donor.height != probe.height) {
        data::detail::write_file(inf_out / "donor_mask.png",
                                 data::encode_gray_png(metrics::detail::to_gray(p.tampered_b), donor.width,
                                                       donor.height));
      }
      detail::write_json(inf_out / "score.json", {{"score", score}});
      detail::write_run_manifest(inf_out, *infer, {{"score", score}});
      out << "detection score " << std::setprecision(6) << score << '\n';
      return kOk;
    }
    if (gradcheck->parsed()) {
      default_out(gc_out, "gradcheck");
      suite.include_model = !no_model;
      const auto rows = run_verification_suite(suite);
      nlohmann::json results = nlohmann::json::array();
      bool all = true;
      for (const auto& r : rows) {
        out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(36) << r.name << std::right << ' '
            << r.metric << ' ' << std::scientific << std::setprecision(3) << r.value << " (tol " << r.tolerance
            << ")" << std::defaultfloat;
        if (!r.detail.empty()) out << "  " << r.detail;
        out << '\n';
        all = all && r.passed;
        results.push_back({{"name", r.name},
                           {"metric", r.metric},
                           {"value", r.value},
                           {"tolerance", r.tolerance},
                           {"passed", r.passed},
                           {"detail", r.detail}});
      }
      detail::write_run_manifest(gc_out, *gradcheck, results);
      return all ? kOk : kFailure;
    }
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const LoadError& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kInvalid;
}

}  // namespace dmac::cli
