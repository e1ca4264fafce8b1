#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "gdpa/adam.hpp"
#include "gdpa/generator.hpp"
#include "gdpa/models.hpp"

// Generator training against a frozen classifier, batch evaluation, the
// success-rate protocol, and the whole-image bounded variant.

namespace gdpa {

enum class AttackMode { NonTargeted, Targeted };
enum class AttackVariant { Patch, Adv };

struct AttackConfig {
  AttackMode mode = AttackMode::NonTargeted;
  int target_class = 0;
  double alpha = 1.0;
  double patch_fraction = 0.0;  // 0 means patch_w/patch_h are explicit
  int patch_w = 0;
  int patch_h = 0;
  LocationMode location_mode = LocationMode::Dynamic;
  double static_lx = 0.0;
  double static_ly = 0.0;
  double beta = 3000.0;
  int epochs = 30;
  int batch_size = 32;
  double lr = 0.01;
  int lr_drop_every = 10;
  double lr_drop_factor = 0.2;
  uint64_t seed = 1;
  PatternSource pattern_source = PatternSource::PatchHead;
  GridScale grid_scale = GridScale::ImageExtent;
  AttackVariant variant = AttackVariant::Patch;
  double epsilon = 8.0;     // 0-255 scale, Adv variant only
  bool adv_signed = false;  // signed-noise variant, excluded from benchmarks
  int eval_limit = 512;
};

// fraction of attacked pixels -> square patch width
inline int patch_width_from_fraction(double frac, int w, int h) {
  if (frac <= 0 || frac > 1) throw RangeError("patch fraction must be in (0,1]");
  const int side = static_cast<int>(std::lround(std::sqrt(frac * w * h)));
  return std::max(1, side);
}

template <typename T>
GeneratorConfig generator_config_for(const AttackConfig& cfg, const Classifier<T>& target) {
  GeneratorConfig gc;
  gc.channels = target.in_c;
  gc.image_h = target.in_h;
  gc.image_w = target.in_w;
  if (cfg.variant == AttackVariant::Adv) {
    gc.pattern_source = PatternSource::FullImage;
    gc.patch_h = target.in_h;
    gc.patch_w = target.in_w;
  } else {
    gc.pattern_source = cfg.pattern_source;
    if (cfg.patch_fraction > 0) {
      gc.patch_w = patch_width_from_fraction(cfg.patch_fraction, target.in_w, target.in_h);
      gc.patch_h = gc.patch_w;
    } else {
      gc.patch_w = cfg.patch_w;
      gc.patch_h = cfg.patch_h;
    }
  }
  gc.beta = cfg.beta;
  gc.grid_scale = cfg.grid_scale;
  return gc;
}

// ---------------------------------------------------------------------------
// GDPA-ADV: whole-image bounded perturbation through the same generator,
// x_adv = clip01(x + (eps/255) * p) with p in (0,1) from the pattern head
// (or in (-1,1) with the signed flag). ||x_adv - x||_inf <= eps/255.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> gdpa_adv_forward(Tape<T>* tape, const Generator<T>& gen, const Tensor<T>& x,
                           double epsilon, bool signed_noise = false) {
  if (epsilon <= 0 || epsilon > 255) throw RangeError("gdpa_adv_forward: epsilon must be in (0,255]");
  if (gen.cfg.pattern_source != PatternSource::FullImage)
    throw UsageError("gdpa_adv_forward: generator must emit full-size patterns");
  Tensor<T> feat = gen.encode(tape, x);
  Tensor<T> raw = linear(tape, feat, gen.pat_w, gen.pat_b);
  Tensor<T> squashed = tanh(tape, raw);
  if (!signed_noise) squashed = add_scalar(tape, scale(tape, squashed, T(0.5)), T(0.5));
  Tensor<T> p = reshape(tape, squashed, x.shape());
  Tensor<T> noise = scale(tape, p, static_cast<T>(epsilon / 255.0));
  gen.forward_images += static_cast<uint64_t>(x.dim(0));
  return clip01(tape, add(tape, x, noise));
}

// ---------------------------------------------------------------------------
// Batch attack evaluation: exactly one generator forward and one classifier
// forward per image.
// ---------------------------------------------------------------------------

template <typename T>
struct AttackBatch {
  Tensor<T> x_adv;
  std::vector<int> adv_pred;
  std::vector<char> success;  // non-targeted: pred != label; targeted: pred == target
};

template <typename T>
AttackBatch<T> attack_batch(const Generator<T>& gen, const Classifier<T>& model,
                            const Tensor<T>& images, const std::vector<int>& labels,
                            const AttackConfig& cfg) {
  if (images.dim(0) != static_cast<int64_t>(labels.size()))
    throw ShapeError("attack_batch: image/label count mismatch");
  AttackBatch<T> out;
  if (cfg.variant == AttackVariant::Adv) {
    out.x_adv = gdpa_adv_forward<T>(nullptr, gen, images, cfg.epsilon, cfg.adv_signed);
  } else {
    Rng loc_rng(cfg.seed * 0x9e3779b9ull + 0x51ed270bull);
    out.x_adv = gdpa_forward<T>(nullptr, gen, images, cfg.alpha, cfg.location_mode,
                                cfg.static_lx, cfg.static_ly, &loc_rng)
                    .x_adv;
  }
  out.adv_pred = predict(model, out.x_adv);
  out.success.resize(out.adv_pred.size());
  for (size_t i = 0; i < out.adv_pred.size(); ++i)
    out.success[i] = cfg.mode == AttackMode::Targeted
                         ? out.adv_pred[i] == cfg.target_class
                         : out.adv_pred[i] != labels[i];
  return out;
}

// ---------------------------------------------------------------------------
// Success-rate protocol
// ---------------------------------------------------------------------------

struct AttackOutcome {
  int label = 0;
  int clean_pred = 0;
  int adv_pred = 0;
};

struct AsrProtocol {
  AttackMode mode = AttackMode::NonTargeted;
  int target_class = 0;
};

// Non-targeted: flips counted over the clean-correct subset. Targeted: hits
// on the target class counted over images whose true label differs from it.
inline double evaluate_asr(const std::vector<AttackOutcome>& results, const AsrProtocol& proto) {
  if (results.empty()) throw ProtocolError("evaluate_asr: no results");
  int64_t denom = 0, succ = 0;
  for (const auto& r : results) {
    if (proto.mode == AttackMode::Targeted) {
      if (r.label == proto.target_class) continue;
      ++denom;
      succ += r.adv_pred == proto.target_class;
    } else {
      if (r.clean_pred != r.label) continue;
      ++denom;
      succ += r.adv_pred != r.label;
    }
  }
  if (denom == 0) throw ProtocolError("evaluate_asr: empty protocol denominator");
  return static_cast<double>(succ) / static_cast<double>(denom);
}

template <typename T>
struct AttackEval {
  double asr = 0;
  double clean_accuracy = 0;        // on the full evaluated set
  double robust_accuracy = 0;       // correct under attack, full set
  double mean_abs_loc = 0;          // mean |l| over the evaluated images
  std::vector<AttackOutcome> outcomes;
};

// Clean pass + attack pass + protocol ASR on up to cfg.eval_limit images.
template <typename T>
AttackEval<T> evaluate_attack(const Generator<T>& gen, const Classifier<T>& model,
                              const Tensor<T>& images, const std::vector<int>& labels,
                              const AttackConfig& cfg) {
  AttackEval<T> ev;
  std::vector<int> clean = predict(model, images);
  AttackBatch<T> batch = attack_batch(gen, model, images, labels, cfg);
  ev.outcomes.resize(labels.size());
  int64_t clean_hit = 0, adv_hit = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    ev.outcomes[i] = {labels[i], clean[i], batch.adv_pred[i]};
    clean_hit += clean[i] == labels[i];
    adv_hit += batch.adv_pred[i] == labels[i];
  }
  ev.clean_accuracy = static_cast<double>(clean_hit) / static_cast<double>(labels.size());
  ev.robust_accuracy = static_cast<double>(adv_hit) / static_cast<double>(labels.size());
  ev.asr = evaluate_asr(ev.outcomes, {cfg.mode, cfg.target_class});
  if (cfg.variant == AttackVariant::Patch && cfg.location_mode == LocationMode::Dynamic) {
    Tensor<T> feat = gen.encode(nullptr, images);
    Tensor<T> loc = gen.decode_location(nullptr, feat);
    double acc = 0;
    for (int64_t i = 0; i < loc.numel(); ++i) acc += std::fabs(static_cast<double>(loc.data()[i]));
    ev.mean_abs_loc = acc / static_cast<double>(loc.numel());
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Generator training (the target stays frozen)
// ---------------------------------------------------------------------------

struct GdpaTrainStats {
  std::vector<double> loss_trace;  // per-epoch mean training loss
  std::vector<double> asr_trace;   // per-epoch held-out ASR
  double final_asr = 0;
};

template <typename T>
Generator<T> make_attack_generator(const AttackConfig& cfg, const Classifier<T>& target) {
  return build_generator<T>(generator_config_for(cfg, target), cfg.seed);
}

template <typename T>
GdpaTrainStats gdpa_train(Generator<T>& gen, Classifier<T>& target, const Tensor<T>& train_images,
                          const std::vector<int>& train_labels, const Tensor<T>& eval_images,
                          const std::vector<int>& eval_labels, const AttackConfig& cfg,
                          bool verbose = false) {
  if (train_images.dim(0) == 0) throw UsageError("gdpa_train: empty dataset");
  if (cfg.mode == AttackMode::Targeted &&
      (cfg.target_class < 0 || cfg.target_class >= target.num_classes))
    throw LabelError("gdpa_train: target class out of range");

  ParamSet<T> gparams = gen.params();
  set_requires_grad(gparams, true);
  ParamSet<T> tparams = target.params();
  set_requires_grad(tparams, false);  // frozen target
  auto adam = AdamState<T>::make(gparams, cfg.lr);

  Rng shuffle_rng(cfg.seed);
  Rng loc_rng(cfg.seed * 0x2545F491ull + 1);

  const int64_t n = train_images.dim(0);
  std::vector<int> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);

  std::vector<int> eval_idx;
  for (int64_t i = 0; i < std::min<int64_t>(eval_images.dim(0), cfg.eval_limit); ++i)
    eval_idx.push_back(static_cast<int>(i));
  Tensor<T> ev_images = eval_idx.empty() ? eval_images : gather_rows(eval_images, eval_idx);
  std::vector<int> ev_labels(eval_labels.begin(),
                             eval_labels.begin() + static_cast<long>(eval_idx.size()));

  // last finite state, restored if an update diverges
  std::vector<std::vector<T>> last_good;
  for (auto& [nm, p] : gparams) last_good.push_back(p.values());

  GdpaTrainStats stats;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.lr = cfg.lr * std::pow(cfg.lr_drop_factor,
                                cfg.lr_drop_every > 0 ? epoch / cfg.lr_drop_every : 0);
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    int64_t batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<int> idx(order.begin() + static_cast<long>(start),
                           order.begin() + static_cast<long>(end));
      Tensor<T> xb = gather_rows(train_images, idx);
      std::vector<int> yb = gather_labels(train_labels, idx);

      Tape<T> tape;
      Tensor<T> x_adv;
      if (cfg.variant == AttackVariant::Adv) {
        x_adv = gdpa_adv_forward(&tape, gen, xb, cfg.epsilon, cfg.adv_signed);
      } else {
        x_adv = gdpa_forward(&tape, gen, xb, cfg.alpha, cfg.location_mode, cfg.static_lx,
                             cfg.static_ly, &loc_rng)
                    .x_adv;
      }
      Tensor<T> logits = target.forward(&tape, x_adv);
      Tensor<T> loss;
      if (cfg.mode == AttackMode::Targeted) {
        std::vector<int> yt(yb.size(), cfg.target_class);
        loss = softmax_cross_entropy(&tape, logits, yt);
      } else {
        loss = scale(&tape, softmax_cross_entropy(&tape, logits, yb), T(-1));
      }
      if (!std::isfinite(static_cast<double>(loss.item()))) {
        for (size_t i = 0; i < gparams.size(); ++i) gparams[i].second.values() = last_good[i];
        set_requires_grad(tparams, true);
        throw NumericError("gdpa_train: loss diverged at epoch " + std::to_string(epoch) +
                           "; generator restored to last finite state");
      }
      tape.backward(loss);
      adam_step(adam, gparams);
      loss_sum += static_cast<double>(loss.item());
      ++batches;
    }
    stats.loss_trace.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
    for (size_t i = 0; i < gparams.size(); ++i) last_good[i] = gparams[i].second.values();
    if (ev_images.dim(0) > 0) {
      AttackEval<T> ev = evaluate_attack(gen, target, ev_images, ev_labels, cfg);
      stats.asr_trace.push_back(ev.asr);
      if (verbose)
        std::printf("[gdpa-train] epoch %d/%d loss=%.4f asr=%.4f\n", epoch + 1, cfg.epochs,
                    stats.loss_trace.back(), ev.asr);
    }
  }
  stats.final_asr = stats.asr_trace.empty() ? 0.0 : stats.asr_trace.back();
  set_requires_grad(tparams, true);
  return stats;
}

// ---------------------------------------------------------------------------
// Config-grid sweep
// ---------------------------------------------------------------------------

struct SweepCell {
  std::string axis;
  double value = 0;
  double asr = 0;
  double clean_accuracy = 0;
  double mean_abs_loc = 0;
  double train_ms = 0;
  double eval_ms = 0;
};

template <typename T>
std::vector<SweepCell> sweep(Classifier<T>& target, const Tensor<T>& train_images,
                             const std::vector<int>& train_labels, const Tensor<T>& eval_images,
                             const std::vector<int>& eval_labels, const AttackConfig& base,
                             const std::string& axis, const std::vector<double>& values,
                             bool verbose = false) {
  if (values.empty()) throw UsageError("sweep: empty grid");
  std::vector<SweepCell> cells;
  for (double v : values) {
    AttackConfig cfg = base;
    if (axis == "alpha")
      cfg.alpha = v;
    else if (axis == "patch_fraction")
      cfg.patch_fraction = v;
    else if (axis == "beta")
      cfg.beta = v;
    else if (axis == "epsilon")
      cfg.epsilon = v;
    else
      throw UsageError("sweep: unknown axis '" + axis + "'");

    const auto t0 = std::chrono::steady_clock::now();
    Generator<T> gen = make_attack_generator(cfg, target);
    GdpaTrainStats stats =
        gdpa_train(gen, target, train_images, train_labels, eval_images, eval_labels, cfg);
    const auto t1 = std::chrono::steady_clock::now();
    AttackEval<T> ev = evaluate_attack(gen, target, eval_images, eval_labels, cfg);
    const auto t2 = std::chrono::steady_clock::now();

    SweepCell cell;
    cell.axis = axis;
    cell.value = v;
    cell.asr = ev.asr;
    cell.clean_accuracy = ev.clean_accuracy;
    cell.mean_abs_loc = ev.mean_abs_loc;
    cell.train_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    cell.eval_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    cells.push_back(cell);
    if (verbose)
      std::printf("[sweep] %s=%.4f asr=%.4f clean=%.4f\n", axis.c_str(), v, cell.asr,
                  cell.clean_accuracy);
  }
  return cells;
}

}  // namespace gdpa
