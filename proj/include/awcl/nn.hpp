#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "awcl/autodiff.hpp"
#include "awcl/image.hpp"
#include "awcl/rng.hpp"

namespace awcl {

enum class Backbone { small_cnn, resnet18 };

// Encoder f(.) plus projection head g(.) producing z = g(f(x)).
struct EncoderSpec {
  Backbone backbone = Backbone::small_cnn;
  int input_channels = 1;
  int feature_dim = 32;     // 32 for small_cnn, 512 for resnet18
  int projection_dim = 128;

  static EncoderSpec small_cnn(int projection_dim = 128) {
    return {Backbone::small_cnn, 1, 32, projection_dim};
  }
  static EncoderSpec resnet18(int projection_dim = 128) {
    return {Backbone::resnet18, 1, 512, projection_dim};
  }
};

// Named parameter leaves plus non-differentiable buffers (BN running stats).
// Ordering is fixed at creation so serialization and hashing are stable.
struct ParamStore {
  std::vector<std::string> order;
  std::map<std::string, ad::Value> params;
  std::vector<std::string> buffer_order;
  std::map<std::string, Tensor> buffers;

  ad::Value add_param(const std::string& name, Tensor init);
  const ad::Value& param(const std::string& name) const;
  bool has_param(const std::string& name) const { return params.count(name) > 0; }
  Tensor& add_buffer(const std::string& name, Tensor init);
  Tensor& buffer(const std::string& name);

  void zero_grad();
  int64_t n_scalars() const;
  // Hash over parameter values whose names start with prefix (all if empty).
  uint64_t values_hash(const std::string& prefix = "") const;
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;
};

struct EncoderOut {
  ad::Value features;     // [n, feature_dim]
  ad::Value feature_map;  // [n, c, h, w] pre-pooling
};

// Parameter creation; prefixes: "enc." for the encoder, "proj." for the head.
void init_encoder(const EncoderSpec& spec, ParamStore& store, Rng& rng);
void init_projection_head(const EncoderSpec& spec, ParamStore& store, Rng& rng);

EncoderOut encoder_forward(const EncoderSpec& spec, ParamStore& store, const ad::Value& images,
                           bool training);
ad::Value projection_forward(const EncoderSpec& spec, const ParamStore& store, const ad::Value& features);

// Task heads.
enum class HeadKind { classifier, nonlinear_classifier, segmentation_decoder };

void init_head(HeadKind kind, const EncoderSpec& spec, int n_classes, ParamStore& store, Rng& rng,
               const std::string& prefix = "head.");
ad::Value head_forward(HeadKind kind, const EncoderSpec& spec, const ParamStore& store,
                       const EncoderOut& enc, const std::string& prefix = "head.");

// Stacks grayscale images into an [n, c, h, w] tensor (channel-replicated when
// the spec demands more than one input channel).
Tensor images_to_tensor(const std::vector<Image>& images, int channels = 1);

// Convenience inference entry points (eval mode, no parameter updates).
Tensor embed_images(const EncoderSpec& spec, ParamStore& store, const std::vector<Image>& images);
Tensor feature_vectors(const EncoderSpec& spec, ParamStore& store, const std::vector<Image>& images);

// ---- optimizers ----

class AdamOpt {
 public:
  AdamOpt(double lr, double weight_decay = 0.0, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamStore& store, const std::vector<std::string>& names);

  int64_t t() const { return t_; }
  std::map<std::string, Tensor>& state_m() { return m_; }
  std::map<std::string, Tensor>& state_v() { return v_; }
  void set_t(int64_t t) { t_ = t; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum = 0.9, double weight_decay = 0.0)
      : lr_(lr), momentum_(momentum), wd_(weight_decay) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void step(ParamStore& store, const std::vector<std::string>& names);

 private:
  double lr_, momentum_, wd_;
  std::map<std::string, Tensor> vel_;
};

class RmspropOpt {
 public:
  RmspropOpt(double lr, double momentum = 0.9, double weight_decay = 0.0, double alpha = 0.99,
             double eps = 1e-8)
      : lr_(lr), momentum_(momentum), wd_(weight_decay), alpha_(alpha), eps_(eps) {}

  void step(ParamStore& store, const std::vector<std::string>& names);

 private:
  double lr_, momentum_, wd_, alpha_, eps_;
  std::map<std::string, Tensor> sq_, vel_;
};

// ---- checkpoints ----

// Versioned binary container: JSON header (spec, cursor, RNG seed, taxonomy and
// config fingerprints, blob directory) followed by raw little-endian doubles.
struct Checkpoint {
  EncoderSpec spec;
  uint64_t seed = 0;
  uint64_t taxonomy_hash = 0;
  uint64_t config_hash = 0;
  int epoch = 0;
  int step = 0;
  ParamStore store;
  std::map<std::string, Tensor> opt_state;
  std::map<std::string, double> meta;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace awcl
