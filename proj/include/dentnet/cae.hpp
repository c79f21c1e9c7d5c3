#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dentnet/damage_cnn.hpp"
#include "dentnet/loss.hpp"
#include "dentnet/network.hpp"
#include "dentnet/optimizer.hpp"
#include "dentnet/prng.hpp"

namespace dentnet {

// Layerwise autoencoder pretraining of the classifier's conv stages.
// Stage s trains encoder conv s to reconstruct its own input through an
// untied decoder (zero-stuffing upsample + conv back to the input depth);
// the decoder is discarded, and later stages see earlier stages frozen.
struct CaeConfig {
  double pretrain_lr = 0.01;
  double finetune_lr = 0.001;
  double momentum = 0.9;
  std::size_t pretrain_epochs = 5;
  std::size_t finetune_epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(pretrain_lr > 0.0) || !(finetune_lr > 0.0))
      throw std::invalid_argument("cae config: learning rates must be > 0");
    if (!(finetune_lr < pretrain_lr))
      throw std::invalid_argument("cae config: finetune_lr must be strictly below pretrain_lr");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("cae config: momentum must be in [0,1)");
    if (batch_size < 1) throw std::invalid_argument("cae config: batch_size must be >= 1");
  }
};

struct PretrainedStage {
  std::size_t stage_index = 0;
  Tensor kernels{{1, 1, 1, 1}};
  Tensor bias{{1}};
};

namespace cae_detail {

// Zero-stuffing upsample as a layer so the decoder can be driven through
// the common forward/backward chain. No parameters.
class ZeroUpsampleLayer final : public Layer {
 public:
  explicit ZeroUpsampleLayer(std::size_t factor) : factor_(factor) {
    if (factor == 0) throw std::invalid_argument("upsample: zero factor");
  }

  std::string kind() const override { return "upsample"; }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 3)
      throw std::invalid_argument("upsample expects HxWxC input, got " + shape_str(in));
    return {in[0] * factor_, in[1] * factor_, in[2]};
  }

  Tensor forward(const Tensor& x, Mode, Prng*) override {
    in_h_ = x.dim(1);
    in_w_ = x.dim(2);
    const std::size_t b = batch_of(x), c = x.dim(3);
    Tensor out({b, in_h_ * factor_, in_w_ * factor_, c});
    const std::size_t in_per = in_h_ * in_w_ * c;
    const std::size_t out_per = out.size() / b;
    for (std::size_t s = 0; s < b; ++s) {
      Tensor one({in_h_, in_w_, c},
                 std::vector<double>(x.data() + s * in_per, x.data() + (s + 1) * in_per));
      Tensor up = upsample_zero(one, factor_);
      std::copy(up.data(), up.data() + out_per, out.data() + s * out_per);
    }
    has_cache_ = true;
    return out;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache(has_cache_);
    has_cache_ = false;
    const std::size_t b = batch_of(dy), c = dy.dim(3);
    Tensor dx({b, in_h_, in_w_, c});
    const std::size_t dy_per = dy.size() / b;
    const std::size_t dx_per = in_h_ * in_w_ * c;
    for (std::size_t s = 0; s < b; ++s) {
      Tensor one({in_h_ * factor_, in_w_ * factor_, c},
                 std::vector<double>(dy.data() + s * dy_per, dy.data() + (s + 1) * dy_per));
      Tensor picked = downsample_pick(one, factor_, in_h_, in_w_);
      std::copy(picked.data(), picked.data() + dx_per, dx.data() + s * dx_per);
    }
    return dx;
  }

 private:
  std::size_t factor_;
  std::size_t in_h_ = 0, in_w_ = 0;
  bool has_cache_ = false;
};

inline std::size_t stage_in_channels(const CnnConfig& topo, std::size_t stage) {
  return stage == 0 ? topo.channels : topo.filters;
}

inline void check_stage_order(const CnnConfig& topo, std::size_t stage_index,
                              const std::vector<PretrainedStage>& earlier) {
  if (stage_index >= topo.conv_blocks)
    throw std::invalid_argument("cae: stage " + std::to_string(stage_index) +
                                " out of range, topology has " +
                                std::to_string(topo.conv_blocks) + " conv stages");
  if (earlier.size() != stage_index)
    throw std::invalid_argument("cae: stage " + std::to_string(stage_index) + " requires " +
                                std::to_string(stage_index) +
                                " pretrained earlier stages, got " +
                                std::to_string(earlier.size()));
  for (std::size_t i = 0; i < earlier.size(); ++i)
    if (earlier[i].stage_index != i)
      throw std::invalid_argument("cae: earlier stages out of order at position " +
                                  std::to_string(i));
}

inline std::unique_ptr<Conv2dLayer> conv_from_stage(const CnnConfig& topo,
                                                    const PretrainedStage& st) {
  auto conv = std::make_unique<Conv2dLayer>(topo.kernel, stage_in_channels(topo, st.stage_index),
                                            topo.filters);
  auto params = conv->params();
  if (!params[0].value->same_shape(st.kernels) || !params[1].value->same_shape(st.bias))
    throw std::invalid_argument("cae: stage " + std::to_string(st.stage_index) +
                                " weights do not fit the topology");
  *params[0].value = st.kernels;
  *params[1].value = st.bias;
  return conv;
}

// Encode one image through the frozen earlier stages (conv+relu+pool each).
inline Tensor encode_through(const CnnConfig& topo, const std::vector<PretrainedStage>& stages,
                             const Tensor& image) {
  Tensor x = image;
  for (const auto& st : stages) {
    auto conv = conv_from_stage(topo, st);
    Shape batched{1};
    batched.insert(batched.end(), x.shape().begin(), x.shape().end());
    Tensor y = conv->forward(x.reshaped(batched), Mode::Eval, nullptr);
    ReluLayer relu;
    y = relu.forward(y, Mode::Eval, nullptr);
    MaxPoolLayer pool(topo.pool_window, topo.pool_stride);
    y = pool.forward(y, Mode::Eval, nullptr);
    x = y.reshaped(sample_shape(y));
  }
  return x;
}

}  // namespace cae_detail

// Conv layer carrying a pretrained stage's weights, e.g. for checkpointing.
inline std::unique_ptr<Conv2dLayer> stage_conv(const CnnConfig& topo,
                                               const PretrainedStage& st) {
  return cae_detail::conv_from_stage(topo, st);
}

// Mean per-pixel reconstruction MSE of one stage's autoencoder over a set
// of already-encoded stage inputs.
inline double cae_reconstruction_mse(Layer& enc_conv, Layer& dec_conv, const CnnConfig& topo,
                                     const std::vector<Tensor>& inputs,
                                     std::size_t batch_size) {
  cae_detail::ZeroUpsampleLayer up(topo.pool_stride);
  ReluLayer relu;
  MaxPoolLayer pool(topo.pool_window, topo.pool_stride);
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double total = 0.0;
  for (std::size_t at = 0; at < inputs.size(); at += batch_size) {
    const std::size_t stop = std::min(inputs.size(), at + batch_size);
    Tensor batch = stack_samples(inputs, order, at, stop);
    Tensor z = pool.forward(relu.forward(enc_conv.forward(batch, Mode::Eval, nullptr),
                                         Mode::Eval, nullptr),
                            Mode::Eval, nullptr);
    Tensor recon = dec_conv.forward(up.forward(z, Mode::Eval, nullptr), Mode::Eval, nullptr);
    total += mse(recon, batch) * static_cast<double>(stop - at);
  }
  return total / static_cast<double>(inputs.size());
}

struct StagePretrainResult {
  PretrainedStage stage;
  double mse_at_init = 0.0;
  double mse_after = 0.0;
};

// Train stage stage_index on the unlabeled images. Earlier stages encode
// the input and are never touched. Dropout stays off throughout.
inline StagePretrainResult cae_pretrain_stage(std::size_t stage_index,
                                              const std::vector<Tensor>& images,
                                              const CnnConfig& topo, const CaeConfig& cfg,
                                              const std::vector<PretrainedStage>& earlier,
                                              std::ostream* log = nullptr) {
  topo.validate();
  cfg.validate();
  cae_detail::check_stage_order(topo, stage_index, earlier);
  if (images.empty()) throw std::invalid_argument("cae: no pretraining images");

  std::vector<Tensor> inputs;
  inputs.reserve(images.size());
  for (const auto& img : images)
    inputs.push_back(cae_detail::encode_through(topo, earlier, img));

  const std::size_t in_c = cae_detail::stage_in_channels(topo, stage_index);
  Conv2dLayer enc(topo.kernel, in_c, topo.filters);
  ReluLayer relu;
  MaxPoolLayer pool(topo.pool_window, topo.pool_stride);
  cae_detail::ZeroUpsampleLayer up(topo.pool_stride);
  Conv2dLayer dec(topo.kernel, topo.filters, in_c);

  Prng init_rng(derive_seed(cfg.seed, "cae-stage-" + std::to_string(stage_index)));
  init_layer_params(enc, init_rng);
  init_layer_params(dec, init_rng);

  StagePretrainResult result;
  result.mse_at_init = cae_reconstruction_mse(enc, dec, topo, inputs, cfg.batch_size);

  std::vector<NamedParam> params;
  for (auto& p : enc.params()) params.push_back({0, "conv", p});
  for (auto& p : dec.params()) params.push_back({1, "conv", p});
  SgdMomentum sgd(cfg.pretrain_lr, cfg.momentum);
  Prng shuffle_rng(derive_seed(cfg.seed, "cae-shuffle-" + std::to_string(stage_index)));

  const std::size_t n = inputs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
    double loss_sum = 0.0;
    for (std::size_t at = 0; at < n; at += cfg.batch_size) {
      const std::size_t stop = std::min(n, at + cfg.batch_size);
      Tensor batch = stack_samples(inputs, order, at, stop);
      Tensor z = pool.forward(relu.forward(enc.forward(batch, Mode::Train, nullptr),
                                           Mode::Train, nullptr),
                              Mode::Train, nullptr);
      Tensor recon = dec.forward(up.forward(z, Mode::Train, nullptr), Mode::Train, nullptr);
      loss_sum += mse(recon, batch) * static_cast<double>(stop - at);

      Tensor d_recon(recon.shape());
      const double scale = 2.0 / static_cast<double>(recon.size());
      for (std::size_t i = 0; i < recon.size(); ++i)
        d_recon[i] = scale * (recon[i] - batch[i]);

      enc.zero_grad();
      dec.zero_grad();
      Tensor d = dec.backward(d_recon);
      d = up.backward(d);
      d = pool.backward(d);
      d = relu.backward(d);
      enc.backward(d);
      sgd.step(params);
    }
    if (log)
      *log << "cae stage " << stage_index << " epoch " << epoch << "/" << cfg.pretrain_epochs
           << "  mse " << loss_sum / static_cast<double>(n) << "\n";
  }

  result.mse_after = cae_reconstruction_mse(enc, dec, topo, inputs, cfg.batch_size);
  result.stage.stage_index = stage_index;
  result.stage.kernels = *enc.params()[0].value;
  result.stage.bias = *enc.params()[1].value;
  return result;
}

// Pretrain every conv stage in order on the same unlabeled stream.
inline std::vector<PretrainedStage> cae_pretrain_all(const std::vector<Tensor>& images,
                                                     const CnnConfig& topo, const CaeConfig& cfg,
                                                     std::ostream* log = nullptr) {
  std::vector<PretrainedStage> stages;
  for (std::size_t s = 0; s < topo.conv_blocks; ++s)
    stages.push_back(cae_pretrain_stage(s, images, topo, cfg, stages, log).stage);
  return stages;
}

// Build the full classifier seeded with the pretrained conv weights (FC and
// head get fresh random init) and fine-tune everything with cross-entropy
// at the reduced learning rate. Conv stages are not frozen here.
inline Network assemble_and_finetune(const std::vector<PretrainedStage>& stages,
                                     const std::vector<Tensor>& images,
                                     const std::vector<int>& labels, const CnnConfig& topo,
                                     const CaeConfig& cfg, const FitOptions& opt = {},
                                     std::vector<EpochStats>* history = nullptr) {
  topo.validate();
  cfg.validate();
  if (stages.size() != topo.conv_blocks)
    throw std::invalid_argument("cae: assemble needs " + std::to_string(topo.conv_blocks) +
                                " pretrained stages, got " + std::to_string(stages.size()));
  for (std::size_t i = 0; i < stages.size(); ++i)
    if (stages[i].stage_index != i)
      throw std::invalid_argument("cae: missing pretrained stage " + std::to_string(i));

  Network net = build_damage_cnn(topo);
  Prng init_rng(derive_seed(cfg.seed, "cae-assemble"));
  net.init_params(init_rng);
  std::size_t stage = 0;
  for (auto& layer : net.layers()) {
    auto* conv = dynamic_cast<Conv2dLayer*>(layer.get());
    if (!conv) continue;
    auto params = conv->params();
    if (!params[0].value->same_shape(stages[stage].kernels))
      throw std::invalid_argument("cae: stage " + std::to_string(stage) +
                                  " weights do not fit the topology");
    *params[0].value = stages[stage].kernels;
    *params[1].value = stages[stage].bias;
    ++stage;
  }

  TrainConfig tc;
  tc.learning_rate = cfg.finetune_lr;
  tc.momentum = cfg.momentum;
  tc.batch_size = cfg.batch_size;
  tc.epochs = cfg.finetune_epochs;
  tc.seed = derive_seed(cfg.seed, "cae-finetune");
  auto h = train_classifier(net, images, labels, tc, opt);
  if (history) *history = std::move(h);
  return net;
}

}  // namespace dentnet
