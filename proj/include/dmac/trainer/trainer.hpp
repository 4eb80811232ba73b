#pragma once

// Pretraining (cross entropy only, Adadelta) and the alternating adversarial
// loop: k rounds of verifier and critic updates on fresh minibatches, then
// one matching-network update on another fresh minibatch (all Adam).

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dmac/adversary/losses.hpp"
#include "dmac/adversary/networks.hpp"
#include "dmac/datagen/digest.hpp"
#include "dmac/trainer/checkpoint.hpp"
#include "dmac/trainer/dataset.hpp"
#include "dmac/trainer/optimizers.hpp"
#include "dmac/trainer/sampler.hpp"

namespace dmac::train {

using adversary::LossVariant;

struct TrainConfig {
  std::string preset = "toy";
  std::size_t batch_size = 8;
  std::size_t k = 1;
  double lr_pretrain = 1.0;  // Adadelta multiplier
  double lr_g = 1e-5;
  double lr_adv = 2e-4;
  double lambda_det = 0.01;
  double lambda_dis = 0.01;
  LossVariant variant = LossVariant::Bce;
  bool dis_positive_only = true;
  // Passes over the data; zero means `iterations` is used as given.
  std::size_t epochs = 0;
  std::size_t iterations = 500;
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 1;

  static TrainConfig toy() { return {}; }

  // Full-resolution schedule, kept for reference; not practical on a CPU.
  static TrainConfig paper() {
    TrainConfig c;
    c.preset = "paper";
    c.batch_size = 24;
    c.epochs = 3;
    return c;
  }

  static TrainConfig from_preset(const std::string& name) {
    if (name == "toy") return toy();
    if (name == "paper") return paper();
    throw ParameterError("unknown preset '" + name + "' (expected paper or toy)");
  }

  void validate() const {
    if (batch_size < 1) throw ParameterError("batch size must be >= 1");
    if (k < 1) throw ParameterError("k must be >= 1");
    if (!(lr_pretrain > 0 && lr_g > 0 && lr_adv > 0)) throw ParameterError("learning rates must be > 0");
    if (lambda_det < 0 || lambda_dis < 0) throw ParameterError("loss weights must be >= 0");
    core::DmacConfig::from_preset(preset);
  }

  // Iterations for a run over `n` pairs.
  std::size_t iterations_for(std::size_t n) const {
    if (epochs == 0) return iterations;
    return epochs * ((n + batch_size - 1) / batch_size);
  }

  adversary::LossWeights weights() const { return {lambda_det, lambda_dis, variant}; }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"preset", c.preset},         {"batch_size", c.batch_size},
          {"k", c.k},                   {"lr_pretrain", c.lr_pretrain},
          {"lr_g", c.lr_g},             {"lr_adv", c.lr_adv},
          {"lambda_det", c.lambda_det}, {"lambda_dis", c.lambda_dis},
          {"variant", adversary::to_string(c.variant)},
          {"dis_positive_only", c.dis_positive_only},
          {"epochs", c.epochs},         {"iterations", c.iterations},
          {"checkpoint_every", c.checkpoint_every},
          {"seed", c.seed}};
}

// Missing keys keep the values of `base`.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  try {
    base.preset = j.value("preset", base.preset);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.k = j.value("k", base.k);
    base.lr_pretrain = j.value("lr_pretrain", base.lr_pretrain);
    base.lr_g = j.value("lr_g", base.lr_g);
    base.lr_adv = j.value("lr_adv", base.lr_adv);
    base.lambda_det = j.value("lambda_det", base.lambda_det);
    base.lambda_dis = j.value("lambda_dis", base.lambda_dis);
    if (j.contains("variant")) base.variant = adversary::parse_variant(j.at("variant").get<std::string>());
    base.dis_positive_only = j.value("dis_positive_only", base.dis_positive_only);
    base.epochs = j.value("epochs", base.epochs);
    base.iterations = j.value("iterations", base.iterations);
    base.checkpoint_every = j.value("checkpoint_every", base.checkpoint_every);
    base.seed = j.value("seed", base.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("training config: ") + e.what());
  }
  return base;
}

// One optimizer step's worth of measurements.
struct StepRecord {
  std::string phase;  // pretrain | adversarial
  std::uint64_t iteration = 0;
  double ce = 0, det_g = 0, dis_g = 0, total = 0;
  double det_d = 0, dis_d = 0;  // last inner round
  double max_sigma = 0;         // critic spectral norm after its last update
  double seconds = 0;

  bool finite() const {
    for (double v : {ce, det_g, dis_g, total, det_d, dis_d}) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"phase", phase}, {"iteration", iteration}, {"ce", ce}, {"total", total}, {"seconds", seconds}};
    if (phase == "adversarial") {
      j["det_g"] = det_g;
      j["dis_g"] = dis_g;
      j["det_d"] = det_d;
      j["dis_d"] = dis_d;
      j["max_sigma"] = max_sigma;
    }
    return j;
  }
};

// Update order within the last step, with the parameter version each
// network had when the update ran.
struct UpdateEvent {
  std::string network;  // det | dis | dmac
  std::uint64_t det_version, dis_version, dmac_version;
};

namespace detail {

template <typename S, typename Span>
void load_into(const CheckpointData& c, const std::string& name, const ad::Shape& shape, Span&& dst) {
  const ArrayRecord* rec = c.find(name);
  if (!rec) throw ShapeMismatchError("checkpoint has no array '" + name + "'");
  if (rec->shape != shape) {
    throw ShapeMismatchError("checkpoint array '" + name + "' has shape " + ad::to_string(rec->shape) +
                             ", expected " + ad::to_string(shape));
  }
  const auto v = rec->values<S>();
  std::copy(v.begin(), v.end(), dst.begin());
}

}  // namespace detail

template <typename S>
class Trainer {
 public:
  Trainer(TrainConfig cfg, Dataset data)
      : cfg_(std::move(cfg)), net_cfg_(core::DmacConfig::from_preset(cfg_.preset)), data_(std::move(data)) {
    cfg_.validate();
    if (data_.empty()) throw ParameterError("trainer: empty dataset");
    if (data_.input_size != net_cfg_.input_size || data_.mask_size != net_cfg_.feature_size()) {
      throw DimensionError("trainer: dataset resolution " + std::to_string(data_.input_size) + "/" +
                           std::to_string(data_.mask_size) + " does not match preset '" + cfg_.preset + "'");
    }
    dmac_ = std::make_unique<core::DmacNet<S>>(net_cfg_, data::mix_seed(cfg_.seed, 1));
    det_ = std::make_unique<adversary::DetNet<S>>(data_.mask_size, data::mix_seed(cfg_.seed, 2));
    dis_ = std::make_unique<adversary::DisNet<S>>(data_.mask_size, cfg_.variant, data::mix_seed(cfg_.seed, 3));
    sampler_ = StratifiedSampler(data_, data::mix_seed(cfg_.seed, 4));
    dmac_->set_input_mean(channel_mean(data_));
    pre_opt_ = Adadelta<S>(cfg_.lr_pretrain);
    g_opt_ = std::make_unique<Adam<S>>(cfg_.lr_g);
    det_opt_ = std::make_unique<Adam<S>>(cfg_.lr_adv);
    dis_opt_ = std::make_unique<Adam<S>>(cfg_.lr_adv);
  }

  const TrainConfig& config() const { return cfg_; }
  const Dataset& dataset() const { return data_; }
  core::DmacNet<S>& dmac() { return *dmac_; }
  adversary::DetNet<S>& det() { return *det_; }
  adversary::DisNet<S>& dis() { return *dis_; }
  std::uint64_t pretrain_iterations() const { return pre_iter_; }
  std::uint64_t adversarial_iterations() const { return adv_iter_; }
  const std::vector<UpdateEvent>& last_events() const { return events_; }

  StepRecord pretrain_step() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batch = assemble<S>(data_, sampler_.next(cfg_.batch_size));
    zero_all();
    ad::Tape<S> tape;
    StepRecord rec{"pretrain", pre_iter_};
    {
      ad::TapeScope<S> scope(tape);
      const auto out = dmac_->forward(dmac_->normalize(batch.raw_a), dmac_->normalize(batch.raw_b), ad::Mode::Train);
      const auto ce = adversary::spatial_ce(out, batch.gt_a, batch.gt_b);
      rec.ce = rec.total = static_cast<double>(ce.item());
      guard(rec, "pretrain");
      tape.backward(ce);
    }
    pre_opt_.step(dmac_->parameters());
    ++pre_iter_;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

  StepRecord adversarial_step() {
    const auto t0 = std::chrono::steady_clock::now();
    events_.clear();
    StepRecord rec{"adversarial", adv_iter_};
    for (std::size_t round = 0; round < cfg_.k; ++round) critic_round(rec);

    const auto batch = assemble<S>(data_, sampler_.next(cfg_.batch_size));
    zero_all();
    events_.push_back({"dmac", det_version_, dis_version_, dmac_version_});
    ad::Tape<S> tape;
    {
      ad::TapeScope<S> scope(tape);
      const auto a = dmac_->normalize(batch.raw_a), b = dmac_->normalize(batch.raw_b);
      const auto out = dmac_->forward(a, b, ad::Mode::Train);
      const auto ce = adversary::spatial_ce(out, batch.gt_a, batch.gt_b);
      Tensor<S> det_g, dis_g;
      const auto pa = adversary::pool_image(a, pool_factor()), pb = adversary::pool_image(b, pool_factor());
      if (cfg_.lambda_det != 0) {
        det_g = adversary::det_loss_G(
            det_->forward(adversary::mask_image(out.y_a, pa), adversary::mask_image(out.y_b, pb), ad::Mode::Train),
            batch.det_labels);
        rec.det_g = static_cast<double>(det_g.item());
      }
      const auto rows = dis_rows(batch);
      if (cfg_.lambda_dis != 0 && !rows.empty()) {
        dis_g = adversary::dis_loss_G(critic_scores(ad::gather_batch(out.y_a, rows), ad::gather_batch(out.y_b, rows),
                                                    ad::gather_batch(pa, rows), ad::gather_batch(pb, rows)),
                                      cfg_.variant);
        rec.dis_g = static_cast<double>(dis_g.item());
      }
      auto w = cfg_.weights();
      if (!dis_g.defined()) w.lambda_dis = 0;
      const auto total = adversary::dmac_total_loss(ce, det_g, dis_g, w);
      rec.ce = static_cast<double>(ce.item());
      rec.total = static_cast<double>(total.item());
      guard(rec, "adversarial");
      tape.backward(total);
    }
    g_opt_->step(dmac_->parameters());
    ++dmac_version_;
    ++adv_iter_;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

  // Mean cross entropy over the whole set in evaluation mode, per pair.
  double evaluate_ce(std::size_t chunk = 16) {
    ad::NoGradScope<S> off;
    double total = 0;
    for (std::size_t start = 0; start < data_.size(); start += chunk) {
      std::vector<std::size_t> idx;
      for (std::size_t i = start; i < std::min(data_.size(), start + chunk); ++i) idx.push_back(i);
      const auto batch = assemble<S>(data_, idx);
      const auto out = dmac_->forward(dmac_->normalize(batch.raw_a), dmac_->normalize(batch.raw_b), ad::Mode::Eval);
      total += static_cast<double>(adversary::spatial_ce(out, batch.gt_a, batch.gt_b).item()) * idx.size();
    }
    return total / data_.size();
  }

  // Tampered-channel probabilities (B x 2 x s x s) in evaluation mode.
  core::MaskPair<S> predict(const std::vector<std::size_t>& indices) {
    ad::NoGradScope<S> off;
    const auto batch = assemble<S>(data_, indices);
    return dmac_->forward(dmac_->normalize(batch.raw_a), dmac_->normalize(batch.raw_b), ad::Mode::Eval);
  }

  CheckpointData checkpoint() {
    CheckpointData c;
    c.meta = {{"format", "dmac-checkpoint"},
              {"config", to_json(cfg_)},
              {"dtype", sizeof(S) == 4 ? "f32" : "f64"},
              {"counters",
               {{"pretrain", pre_iter_},
                {"adversarial", adv_iter_},
                {"adadelta_steps", pre_opt_.steps()},
                {"adam_g_steps", g_opt_->steps()},
                {"adam_det_steps", det_opt_->steps()},
                {"adam_dis_steps", dis_opt_->steps()},
                {"det_version", det_version_},
                {"dis_version", dis_version_},
                {"dmac_version", dmac_version_}}},
              {"dataset", {{"pairs", data_.size()}, {"fingerprint", fingerprint(data_)}}},
              {"sampler", sampler_.state()}};
    for (auto& [prefix, ps] : networks()) {
      for (const auto& e : ps->entries()) {
        c.arrays.push_back(ArrayRecord::from<S>(prefix + e.name, e.tensor.shape(), e.tensor.values()));
      }
    }
    for (auto& [prefix, states] : optimizer_states()) {
      for (const auto& st : states) {
        c.arrays.push_back(ArrayRecord::from<S>(prefix + st.name, ad::Shape{st.values->size()},
                                                std::span<const S>(*st.values)));
      }
    }
    return c;
  }

  // Restores parameters, buffers, optimizer state and counters. The
  // sampler position is restored only when the checkpoint was written over
  // the same dataset; the configuration of this trainer is kept.
  void restore(const CheckpointData& c) {
    for (auto& [prefix, ps] : networks()) {
      for (const auto& e : ps->entries()) {
        Tensor<S> t = e.tensor;
        detail::load_into<S>(c, prefix + e.name, t.shape(), t.values());
      }
    }
    for (auto& [prefix, states] : optimizer_states()) {
      for (const auto& st : states) detail::load_into<S>(c, prefix + st.name, ad::Shape{st.values->size()}, *st.values);
    }
    try {
      const auto& n = c.meta.at("counters");
      pre_iter_ = n.at("pretrain");
      adv_iter_ = n.at("adversarial");
      pre_opt_.set_steps(n.at("adadelta_steps"));
      g_opt_->set_steps(n.at("adam_g_steps"));
      det_opt_->set_steps(n.at("adam_det_steps"));
      dis_opt_->set_steps(n.at("adam_dis_steps"));
      det_version_ = n.at("det_version");
      dis_version_ = n.at("dis_version");
      dmac_version_ = n.at("dmac_version");
      if (c.meta.at("dataset").at("fingerprint") == fingerprint(data_)) sampler_.restore(c.meta.at("sampler"));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("checkpoint meta: ") + e.what());
    }
  }

  // Hash of the pair ids and their order.
  static std::string fingerprint(const Dataset& d) {
    data::Sha256 h;
    for (const auto& s : d.samples) h.update(s.id.data(), s.id.size()).update("\n", 1);
    return h.hex();
  }

 private:
  std::size_t pool_factor() const { return data_.input_size / data_.mask_size; }

  std::vector<std::size_t> dis_rows(const Batch<S>& b) const {
    if (cfg_.dis_positive_only) return b.positive;
    std::vector<std::size_t> all(b.indices.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }

  std::vector<Tensor<S>> critic_scores(const Tensor<S>& ya, const Tensor<S>& yb, const Tensor<S>& pa,
                                       const Tensor<S>& pb) {
    return {dis_->forward(adversary::mask_image(ya, pa)), dis_->forward(adversary::mask_image(yb, pb))};
  }

  void critic_round(StepRecord& rec) {
    const auto batch = assemble<S>(data_, sampler_.next(cfg_.batch_size));
    Tensor<S> a, b, pa, pb;
    core::MaskPair<S> gen;
    {
      ad::NoGradScope<S> off;
      a = dmac_->normalize(batch.raw_a);
      b = dmac_->normalize(batch.raw_b);
      gen = dmac_->forward(a, b, ad::Mode::Train);
      pa = adversary::pool_image(a, pool_factor());
      pb = adversary::pool_image(b, pool_factor());
    }

    zero_all();
    events_.push_back({"det", det_version_, dis_version_, dmac_version_});
    {
      ad::Tape<S> tape;
      ad::TapeScope<S> scope(tape);
      const auto on_gt = det_->forward(adversary::mask_image(batch.gt_a, pa), adversary::mask_image(batch.gt_b, pb),
                                       ad::Mode::Train);
      const auto on_gen = det_->forward(adversary::mask_image(gen.y_a, pa), adversary::mask_image(gen.y_b, pb),
                                        ad::Mode::Train);
      const auto loss = adversary::det_loss_D(on_gt, on_gen, batch.det_labels);
      rec.det_d = static_cast<double>(loss.item());
      guard(rec, "verifier");
      tape.backward(loss);
    }
    det_opt_->step(det_->parameters());
    ++det_version_;

    const auto rows = dis_rows(batch);
    if (rows.empty()) return;
    zero_all();
    events_.push_back({"dis", det_version_, dis_version_, dmac_version_});
    {
      ad::Tape<S> tape;
      ad::TapeScope<S> scope(tape);
      const auto ra = ad::gather_batch(pa, rows), rb = ad::gather_batch(pb, rows);
      const auto real = critic_scores(ad::gather_batch(batch.gt_a, rows), ad::gather_batch(batch.gt_b, rows), ra, rb);
      const auto fake = critic_scores(ad::gather_batch(gen.y_a, rows), ad::gather_batch(gen.y_b, rows), ra, rb);
      const auto loss = adversary::dis_loss_D(real, fake, cfg_.variant);
      rec.dis_d = static_cast<double>(loss.item());
      guard(rec, "critic");
      tape.backward(loss);
    }
    dis_opt_->step(dis_->parameters());
    ++dis_version_;
    rec.max_sigma = dis_->max_normalized_sigma();
  }

  void zero_all() {
    for (auto& [prefix, ps] : networks()) ps->zero_grad();
  }

  void guard(const StepRecord& rec, const char* where) const {
    if (!rec.finite()) {
      throw NumericError(std::string(where) + " loss is not finite at iteration " + std::to_string(rec.iteration) +
                         ": " + rec.to_json().dump());
    }
  }

  std::vector<std::pair<std::string, ad::ParameterSet<S>*>> networks() {
    return {{"dmac/", &dmac_->parameters()}, {"det/", &det_->parameters()}, {"dis/", &dis_->parameters()}};
  }

  std::vector<std::pair<std::string, std::vector<StateArray<S>>>> optimizer_states() {
    return {{"adadelta/", pre_opt_.state(dmac_->parameters())},
            {"adam_g/", g_opt_->state(dmac_->parameters())},
            {"adam_det/", det_opt_->state(det_->parameters())},
            {"adam_dis/", dis_opt_->state(dis_->parameters())}};
  }

  TrainConfig cfg_;
  core::DmacConfig net_cfg_;
  Dataset data_;
  std::unique_ptr<core::DmacNet<S>> dmac_;
  std::unique_ptr<adversary::DetNet<S>> det_;
  std::unique_ptr<adversary::DisNet<S>> dis_;
  StratifiedSampler sampler_;
  Adadelta<S> pre_opt_;
  std::unique_ptr<Adam<S>> g_opt_, det_opt_, dis_opt_;
  std::uint64_t pre_iter_ = 0, adv_iter_ = 0;
  std::uint64_t det_version_ = 0, dis_version_ = 0, dmac_version_ = 0;
  std::vector<UpdateEvent> events_;
};

// The matching network alone, as stored in a trainer checkpoint.
template <typename S>
std::unique_ptr<core::DmacNet<S>> load_dmac(const CheckpointData& c) {
  TrainConfig cfg;
  try {
    cfg = train_config_from_json(c.meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint meta: ") + e.what());
  }
  auto net = std::make_unique<core::DmacNet<S>>(core::DmacConfig::from_preset(cfg.preset), data::mix_seed(cfg.seed, 1));
  for (const auto& e : net->parameters().entries()) {
    Tensor<S> t = e.tensor;
    detail::load_into<S>(c, "dmac/" + e.name, t.shape(), t.values());
  }
  return net;
}

}  // namespace dmac::train
