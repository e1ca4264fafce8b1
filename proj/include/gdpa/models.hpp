#pragma once

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "gdpa/adam.hpp"
#include "gdpa/checkpoint.hpp"
#include "gdpa/generator.hpp"
#include "gdpa/ops.hpp"
#include "gdpa/rng.hpp"

namespace gdpa {

// Target classifier: three 3x3 conv + relu + 2x2 pool stages (16/32/64
// channels) and one fully-connected layer to K logits.
template <typename T>
struct Classifier {
  std::string arch_tag = "lisa_cnn_like";
  int in_c = 3, in_h = 32, in_w = 32;
  int num_classes = 0;
  std::array<Tensor<T>, 3> conv_w;
  std::array<Tensor<T>, 3> conv_b;
  Tensor<T> fc_w, fc_b;
  mutable uint64_t forward_images = 0;

  ParamSet<T> params() {
    ParamSet<T> ps;
    for (int i = 0; i < 3; ++i) {
      ps.push_back({"conv" + std::to_string(i) + ".w", conv_w[i]});
      ps.push_back({"conv" + std::to_string(i) + ".b", conv_b[i]});
    }
    ps.push_back({"fc.w", fc_w});
    ps.push_back({"fc.b", fc_b});
    return ps;
  }

  int feature_dim() const { return 64 * (in_h / 8) * (in_w / 8); }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != in_c || x.dim(2) != in_h || x.dim(3) != in_w)
      throw ShapeError("classifier: expected NCHW " + std::to_string(in_c) + "x" +
                       std::to_string(in_h) + "x" + std::to_string(in_w) + ", got " +
                       shape_str(x.shape()));
    Tensor<T> h = x;
    for (int i = 0; i < 3; ++i)
      h = max_pool2(tape, relu(tape, conv2d(tape, h, conv_w[i], conv_b[i], 1, 1)));
    h = reshape(tape, h, {x.dim(0), static_cast<int64_t>(feature_dim())});
    forward_images += static_cast<uint64_t>(x.dim(0));
    return linear(tape, h, fc_w, fc_b);
  }
};

template <typename T>
Classifier<T> build_classifier(const std::string& arch_tag, int in_c, int in_h, int in_w,
                               int num_classes, uint64_t seed) {
  if (arch_tag != "lisa_cnn_like") throw UnknownArchError("unknown classifier arch: " + arch_tag);
  if (in_h % 8 != 0 || in_w % 8 != 0)
    throw ShapeError("classifier: image dims must be divisible by 8");
  Classifier<T> c;
  c.arch_tag = arch_tag;
  c.in_c = in_c;
  c.in_h = in_h;
  c.in_w = in_w;
  c.num_classes = num_classes;
  Rng rng(seed);
  const std::array<int, 3> widths = {16, 32, 64};
  int prev = in_c;
  for (int i = 0; i < 3; ++i) {
    const double bound = std::sqrt(6.0 / (static_cast<double>(prev) * 3 * 3));
    c.conv_w[i] = Tensor<T>::uniform({widths[static_cast<size_t>(i)], prev, 3, 3},
                                     static_cast<T>(bound), rng);
    c.conv_b[i] = Tensor<T>::zeros({widths[static_cast<size_t>(i)]});
    prev = widths[static_cast<size_t>(i)];
  }
  const int fd = c.feature_dim();
  const double fb = std::sqrt(6.0 / static_cast<double>(fd));
  c.fc_w = Tensor<T>::uniform({fd, num_classes}, static_cast<T>(fb), rng);
  c.fc_b = Tensor<T>::zeros({num_classes});
  for (auto& [name, p] : c.params()) p.set_requires_grad(true);
  return c;
}

template <typename T>
std::vector<int> predict(const Classifier<T>& model, const Tensor<T>& images) {
  Tensor<T> logits = model.forward(nullptr, images);
  const int64_t N = logits.dim(0), K = logits.dim(1);
  std::vector<int> preds(static_cast<size_t>(N));
  for (int64_t n = 0; n < N; ++n) {
    const T* row = logits.data() + n * K;
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (row[k] > row[best]) best = k;
    preds[static_cast<size_t>(n)] = best;
  }
  return preds;
}

template <typename T>
double accuracy(const Classifier<T>& model, const Tensor<T>& images,
                const std::vector<int>& labels) {
  auto preds = predict(model, images);
  int64_t hit = 0;
  for (size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return preds.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// Cross-entropy training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double lr = 0.01;
  int lr_drop_every = 10;
  double lr_drop_factor = 0.1;
  uint64_t seed = 1;
};

struct EpochStats {
  double train_accuracy = 0;
  double val_accuracy = 0;
  double mean_loss = 0;
};

// Gathers rows `idx` of an NCHW tensor (and labels) into a fresh batch.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& images, const std::vector<int>& idx) {
  const int64_t rec = images.numel() / images.dim(0);
  Shape s = images.shape();
  s[0] = static_cast<int64_t>(idx.size());
  Tensor<T> out = Tensor<T>::zeros(s);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(images.data() + idx[i] * rec, images.data() + (idx[i] + 1) * rec,
              out.data() + static_cast<int64_t>(i) * rec);
  return out;
}

inline std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<int>& idx) {
  std::vector<int> out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) out[i] = labels[static_cast<size_t>(idx[i])];
  return out;
}

// Minimizes mean cross-entropy with Adam and a step-decay schedule. The
// accuracy trace is computed once per epoch (train side capped to bound the
// cost). Throws NumericError and leaves the model at its last finite state
// if the loss diverges.
template <typename T>
std::vector<EpochStats> train_ce(Classifier<T>& model, const Tensor<T>& train_images,
                                 const std::vector<int>& train_labels,
                                 const Tensor<T>& val_images, const std::vector<int>& val_labels,
                                 const TrainConfig& cfg, bool verbose = false) {
  ParamSet<T> params = model.params();
  set_requires_grad(params, true);
  auto adam = AdamState<T>::make(params, cfg.lr);
  Rng shuffle_rng(cfg.seed);

  const int64_t n_train = train_images.dim(0);
  std::vector<int> order(static_cast<size_t>(n_train));
  for (int64_t i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);

  const int64_t trace_cap = 2048;
  std::vector<int> trace_idx;
  for (int64_t i = 0; i < std::min(n_train, trace_cap); ++i)
    trace_idx.push_back(static_cast<int>(i));
  Tensor<T> trace_images = gather_rows(train_images, trace_idx);
  std::vector<int> trace_labels = gather_labels(train_labels, trace_idx);

  std::vector<EpochStats> trace;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.lr =
        cfg.lr * std::pow(cfg.lr_drop_factor, cfg.lr_drop_every > 0 ? epoch / cfg.lr_drop_every : 0);
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
      Tensor<T> logits = model.forward(&tape, xb);
      Tensor<T> loss = softmax_cross_entropy(&tape, logits, yb);
      if (!std::isfinite(static_cast<double>(loss.item())))
        throw NumericError("train_ce: loss diverged at epoch " + std::to_string(epoch));
      tape.backward(loss);
      adam_step(adam, params);
      loss_sum += static_cast<double>(loss.item());
      ++batches;
    }
    EpochStats st;
    st.mean_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    st.train_accuracy = accuracy(model, trace_images, trace_labels);
    st.val_accuracy = val_images.dim(0) > 0 ? accuracy(model, val_images, val_labels) : 0.0;
    trace.push_back(st);
    if (verbose)
      std::printf("[train-target] epoch %d/%d loss=%.4f train_acc=%.4f val_acc=%.4f\n", epoch + 1,
                  cfg.epochs, st.mean_loss, st.train_accuracy, st.val_accuracy);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Checkpoint adapters
// ---------------------------------------------------------------------------

template <typename T>
void save_classifier(const std::string& path, Classifier<T>& model) {
  CheckpointData ckpt;
  ckpt.kind = kCheckpointClassifier;
  ckpt.arch_tag = model.arch_tag;
  ckpt.tensors.push_back(
      {"meta",
       {4},
       {static_cast<float>(model.in_c), static_cast<float>(model.in_h),
        static_cast<float>(model.in_w), static_cast<float>(model.num_classes)}});
  for (auto& [name, t] : model.params()) ckpt.tensors.push_back(to_record(name, t));
  write_checkpoint_file(path, ckpt);
}

template <typename T>
Classifier<T> load_classifier(const std::string& path) {
  CheckpointData ckpt = read_checkpoint_file(path);
  if (ckpt.kind != kCheckpointClassifier)
    throw CorruptCheckpointError("checkpoint is not a classifier: " + path);
  const auto& meta = ckpt.find("meta").data;
  if (meta.size() != 4) throw CorruptCheckpointError("classifier meta malformed");
  Classifier<T> model = build_classifier<T>(ckpt.arch_tag, static_cast<int>(meta[0]),
                                            static_cast<int>(meta[1]), static_cast<int>(meta[2]),
                                            static_cast<int>(meta[3]), /*seed=*/0);
  for (auto& [name, t] : model.params()) {
    const TensorRecord& rec = ckpt.find(name);
    if (rec.extents != t.shape())
      throw CorruptCheckpointError("classifier tensor shape mismatch: " + name);
    for (int64_t i = 0; i < t.numel(); ++i)
      t.data()[i] = static_cast<T>(rec.data[static_cast<size_t>(i)]);
  }
  return model;
}

template <typename T>
void save_generator(const std::string& path, Generator<T>& gen) {
  CheckpointData ckpt;
  ckpt.kind = kCheckpointGenerator;
  ckpt.arch_tag = "gdpa_gen_v1";
  const GeneratorConfig& c = gen.cfg;
  ckpt.tensors.push_back(
      {"meta",
       {8},
       {static_cast<float>(c.channels), static_cast<float>(c.image_h),
        static_cast<float>(c.image_w), static_cast<float>(c.patch_h),
        static_cast<float>(c.patch_w), static_cast<float>(c.beta),
        static_cast<float>(c.pattern_source == PatternSource::FullImage ? 1 : 0),
        static_cast<float>(c.grid_scale == GridScale::PatchExtent ? 1 : 0)}});
  for (auto& [name, t] : gen.params()) ckpt.tensors.push_back(to_record(name, t));
  write_checkpoint_file(path, ckpt);
}

template <typename T>
Generator<T> load_generator(const std::string& path) {
  CheckpointData ckpt = read_checkpoint_file(path);
  if (ckpt.kind != kCheckpointGenerator)
    throw CorruptCheckpointError("checkpoint is not a generator: " + path);
  if (ckpt.arch_tag != "gdpa_gen_v1")
    throw UnknownArchError("unknown generator arch: " + ckpt.arch_tag);
  const auto& meta = ckpt.find("meta").data;
  if (meta.size() != 8) throw CorruptCheckpointError("generator meta malformed");
  GeneratorConfig cfg;
  cfg.channels = static_cast<int>(meta[0]);
  cfg.image_h = static_cast<int>(meta[1]);
  cfg.image_w = static_cast<int>(meta[2]);
  cfg.patch_h = static_cast<int>(meta[3]);
  cfg.patch_w = static_cast<int>(meta[4]);
  cfg.beta = static_cast<double>(meta[5]);
  cfg.pattern_source = meta[6] != 0 ? PatternSource::FullImage : PatternSource::PatchHead;
  cfg.grid_scale = meta[7] != 0 ? GridScale::PatchExtent : GridScale::ImageExtent;
  Generator<T> gen = build_generator<T>(cfg, /*seed=*/0);
  for (auto& [name, t] : gen.params()) {
    const TensorRecord& rec = ckpt.find(name);
    if (rec.extents != t.shape())
      throw CorruptCheckpointError("generator tensor shape mismatch: " + name);
    for (int64_t i = 0; i < t.numel(); ++i)
      t.data()[i] = static_cast<T>(rec.data[static_cast<size_t>(i)]);
  }
  return gen;
}

}  // namespace gdpa
