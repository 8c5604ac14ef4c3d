#include "awcl/nn.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "awcl/errors.hpp"

namespace awcl {

using json = nlohmann::json;

ad::Value ParamStore::add_param(const std::string& name, Tensor init) {
  if (params.count(name)) throw ArgumentError("param already exists: " + name);
  auto v = ad::Value::leaf(std::move(init), true);
  params.emplace(name, v);
  order.push_back(name);
  return v;
}

const ad::Value& ParamStore::param(const std::string& name) const {
  const auto it = params.find(name);
  if (it == params.end()) throw ArgumentError("unknown param: " + name);
  return it->second;
}

Tensor& ParamStore::add_buffer(const std::string& name, Tensor init) {
  if (buffers.count(name)) throw ArgumentError("buffer already exists: " + name);
  buffer_order.push_back(name);
  return buffers.emplace(name, std::move(init)).first->second;
}

Tensor& ParamStore::buffer(const std::string& name) {
  const auto it = buffers.find(name);
  if (it == buffers.end()) throw ArgumentError("unknown buffer: " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : params) {
    (void)name;
    v.mutable_grad() = Tensor::zeros(v.val().shape);
  }
}

int64_t ParamStore::n_scalars() const {
  int64_t n = 0;
  for (const auto& name : order) n += params.at(name).val().numel();
  return n;
}

uint64_t ParamStore::values_hash(const std::string& prefix) const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& name : order) {
    if (name.rfind(prefix, 0) != 0) continue;
    h = hash_mix(h, hash_str(name));
    h = tensor_hash(params.at(name).val(), h);
  }
  for (const auto& name : buffer_order) {
    if (name.rfind(prefix, 0) != 0) continue;
    h = hash_mix(h, hash_str(name));
    h = tensor_hash(buffers.at(name), h);
  }
  return h;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& name : order)
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  return out;
}

namespace {

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  const double stddev = std::sqrt(2.0 / fan_in);
  for (int64_t i = 0; i < t.numel(); ++i) t.v[i] = rng.normal(0.0, stddev);
  return t;
}

void add_conv(ParamStore& s, const std::string& name, int oc, int ic, int k, Rng& rng) {
  s.add_param(name + ".w", he_normal({oc, ic, k, k}, ic * k * k, rng));
  s.add_param(name + ".b", Tensor::zeros({oc}));
}

void add_bn(ParamStore& s, const std::string& name, int c) {
  s.add_param(name + ".gamma", Tensor::full({c}, 1.0));
  s.add_param(name + ".beta", Tensor::zeros({c}));
  s.add_buffer(name + ".running_mean", Tensor::zeros({c}));
  s.add_buffer(name + ".running_var", Tensor::full({c}, 1.0));
}

void add_linear(ParamStore& s, const std::string& name, int in, int out, Rng& rng) {
  s.add_param(name + ".w", he_normal({in, out}, in, rng));
  s.add_param(name + ".b", Tensor::zeros({out}));
}

ad::Value conv(const ParamStore& s, const std::string& name, const ad::Value& x, int stride, int pad) {
  return ad::conv2d(x, s.param(name + ".w"), s.param(name + ".b"), stride, pad);
}

ad::Value bn(ParamStore& s, const std::string& name, const ad::Value& x, bool training) {
  return ad::batchnorm2d(x, s.param(name + ".gamma"), s.param(name + ".beta"),
                         s.buffer(name + ".running_mean"), s.buffer(name + ".running_var"), training);
}

ad::Value linear(const ParamStore& s, const std::string& name, const ad::Value& x) {
  return ad::add_rowvec(ad::matmul(x, s.param(name + ".w")), s.param(name + ".b"));
}

constexpr int kSmallCnnChannels[3] = {8, 16, 32};
constexpr int kResnetStageChannels[4] = {64, 128, 256, 512};

void init_small_cnn(const EncoderSpec& spec, ParamStore& s, Rng& rng) {
  int ic = spec.input_channels;
  for (int i = 0; i < 3; ++i) {
    add_conv(s, "enc.conv" + std::to_string(i), kSmallCnnChannels[i], ic, 3, rng);
    add_bn(s, "enc.bn" + std::to_string(i), kSmallCnnChannels[i]);
    ic = kSmallCnnChannels[i];
  }
}

void init_resnet18(const EncoderSpec& spec, ParamStore& s, Rng& rng) {
  s.add_param("enc.stem.w", he_normal({64, spec.input_channels, 7, 7}, spec.input_channels * 49, rng));
  s.add_param("enc.stem.b", Tensor::zeros({64}));
  add_bn(s, "enc.stem.bn", 64);
  int in_c = 64;
  for (int stage = 0; stage < 4; ++stage) {
    const int out_c = kResnetStageChannels[stage];
    for (int block = 0; block < 2; ++block) {
      const std::string p = "enc.s" + std::to_string(stage) + "b" + std::to_string(block);
      const int stride = (stage > 0 && block == 0) ? 2 : 1;
      add_conv(s, p + ".conv1", out_c, in_c, 3, rng);
      add_bn(s, p + ".bn1", out_c);
      add_conv(s, p + ".conv2", out_c, out_c, 3, rng);
      add_bn(s, p + ".bn2", out_c);
      if (stride != 1 || in_c != out_c) {
        add_conv(s, p + ".down", out_c, in_c, 1, rng);
        add_bn(s, p + ".downbn", out_c);
      }
      in_c = out_c;
    }
  }
}

ad::Value small_cnn_map(ParamStore& s, const ad::Value& x, bool training) {
  ad::Value h = x;
  for (int i = 0; i < 3; ++i) {
    h = conv(s, "enc.conv" + std::to_string(i), h, 2, 1);
    h = ad::relu(bn(s, "enc.bn" + std::to_string(i), h, training));
  }
  return h;
}

ad::Value resnet18_map(ParamStore& s, const ad::Value& x, bool training) {
  ad::Value h = ad::conv2d(x, s.param("enc.stem.w"), s.param("enc.stem.b"), 2, 3);
  h = ad::relu(bn(s, "enc.stem.bn", h, training));
  h = ad::maxpool2d(h, 3, 2, 1);
  int in_c = 64;
  for (int stage = 0; stage < 4; ++stage) {
    const int out_c = kResnetStageChannels[stage];
    for (int block = 0; block < 2; ++block) {
      const std::string p = "enc.s" + std::to_string(stage) + "b" + std::to_string(block);
      const int stride = (stage > 0 && block == 0) ? 2 : 1;
      ad::Value identity = h;
      ad::Value y = ad::relu(bn(s, p + ".bn1", conv(s, p + ".conv1", h, stride, 1), training));
      y = bn(s, p + ".bn2", conv(s, p + ".conv2", y, 1, 1), training);
      if (stride != 1 || in_c != out_c)
        identity = bn(s, p + ".downbn", conv(s, p + ".down", h, stride, 0), training);
      h = ad::relu(ad::add(y, identity));
      in_c = out_c;
    }
  }
  return h;
}

}  // namespace

void init_encoder(const EncoderSpec& spec, ParamStore& store, Rng& rng) {
  switch (spec.backbone) {
    case Backbone::small_cnn:
      if (spec.feature_dim != kSmallCnnChannels[2])
        throw ArgumentError("small_cnn feature_dim must be " + std::to_string(kSmallCnnChannels[2]));
      init_small_cnn(spec, store, rng);
      break;
    case Backbone::resnet18:
      if (spec.feature_dim != 512) throw ArgumentError("resnet18 feature_dim must be 512");
      init_resnet18(spec, store, rng);
      break;
  }
}

void init_projection_head(const EncoderSpec& spec, ParamStore& store, Rng& rng) {
  add_linear(store, "proj.fc1", spec.feature_dim, spec.feature_dim, rng);
  add_linear(store, "proj.fc2", spec.feature_dim, spec.projection_dim, rng);
}

EncoderOut encoder_forward(const EncoderSpec& spec, ParamStore& store, const ad::Value& images,
                           bool training) {
  if (images.val().rank() != 4 || images.val().dim(1) != spec.input_channels)
    throw ArgumentError("encoder_forward: expected [n," + std::to_string(spec.input_channels) +
                        ",h,w] images, got " + images.val().shape_str());
  ad::Value map = (spec.backbone == Backbone::small_cnn) ? small_cnn_map(store, images, training)
                                                         : resnet18_map(store, images, training);
  return {ad::global_avg_pool(map), map};
}

ad::Value projection_forward(const EncoderSpec& spec, const ParamStore& store, const ad::Value& features) {
  (void)spec;
  return linear(store, "proj.fc2", ad::relu(linear(store, "proj.fc1", features)));
}

void init_head(HeadKind kind, const EncoderSpec& spec, int n_classes, ParamStore& store, Rng& rng,
               const std::string& prefix) {
  switch (kind) {
    case HeadKind::classifier:
      add_linear(store, prefix + "fc", spec.feature_dim, n_classes, rng);
      break;
    case HeadKind::nonlinear_classifier:
      add_linear(store, prefix + "fc1", spec.feature_dim, spec.feature_dim, rng);
      add_linear(store, prefix + "fc2", spec.feature_dim, n_classes, rng);
      break;
    case HeadKind::segmentation_decoder: {
      // Skip-less upsampling decoder: up2x + 3x3 conv blocks back to input
      // resolution, then a 1x1 projection to class logits.
      const int ups = (spec.backbone == Backbone::small_cnn) ? 3 : 5;
      int in_c = spec.feature_dim;
      for (int i = 0; i < ups; ++i) {
        const int out_c = std::max(8, in_c / 2);
        add_conv(store, prefix + "up" + std::to_string(i), out_c, in_c, 3, rng);
        in_c = out_c;
      }
      add_conv(store, prefix + "out", n_classes, in_c, 1, rng);
      break;
    }
  }
}

ad::Value head_forward(HeadKind kind, const EncoderSpec& spec, const ParamStore& store,
                       const EncoderOut& enc, const std::string& prefix) {
  switch (kind) {
    case HeadKind::classifier:
      return linear(store, prefix + "fc", enc.features);
    case HeadKind::nonlinear_classifier:
      return linear(store, prefix + "fc2", ad::relu(linear(store, prefix + "fc1", enc.features)));
    case HeadKind::segmentation_decoder: {
      const int ups = (spec.backbone == Backbone::small_cnn) ? 3 : 5;
      ad::Value h = enc.feature_map;
      for (int i = 0; i < ups; ++i)
        h = ad::relu(conv(store, prefix + "up" + std::to_string(i), ad::upsample2x_bilinear(h), 1, 1));
      return conv(store, prefix + "out", h, 1, 0);
    }
  }
  throw ArgumentError("head_forward: unknown head kind");
}

Tensor images_to_tensor(const std::vector<Image>& images, int channels) {
  if (images.empty()) throw ArgumentError("images_to_tensor: empty batch");
  const int h = images[0].h, w = images[0].w;
  Tensor t = Tensor::zeros({static_cast<int>(images.size()), channels, h, w});
  for (size_t i = 0; i < images.size(); ++i) {
    if (images[i].h != h || images[i].w != w)
      throw ArgumentError("images_to_tensor: inconsistent image shapes");
    for (int c = 0; c < channels; ++c)
      t.v.segment((static_cast<int64_t>(i) * channels + c) * h * w, static_cast<int64_t>(h) * w) =
          images[i].v;
  }
  return t;
}

Tensor embed_images(const EncoderSpec& spec, ParamStore& store, const std::vector<Image>& images) {
  auto x = ad::Value::constant(images_to_tensor(images, spec.input_channels));
  auto enc = encoder_forward(spec, store, x, false);
  return projection_forward(spec, store, enc.features).val();
}

Tensor feature_vectors(const EncoderSpec& spec, ParamStore& store, const std::vector<Image>& images) {
  auto x = ad::Value::constant(images_to_tensor(images, spec.input_channels));
  return encoder_forward(spec, store, x, false).features.val();
}

void AdamOpt::step(ParamStore& store, const std::vector<std::string>& names) {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (const auto& name : names) {
    auto& p = store.params.at(name);
    Tensor& val = p.mutable_val();
    const Tensor& g = p.grad();
    if (g.numel() != val.numel()) throw NumericalError("adam: missing gradient for " + name);
    auto [mit, minserted] = m_.try_emplace(name, Tensor::zeros(val.shape));
    auto [vit, vinserted] = v_.try_emplace(name, Tensor::zeros(val.shape));
    Eigen::ArrayXd geff = g.v + wd_ * val.v;
    mit->second.v = b1_ * mit->second.v + (1.0 - b1_) * geff;
    vit->second.v = b2_ * vit->second.v + (1.0 - b2_) * geff.square();
    val.v -= lr_ * (mit->second.v / bc1) / ((vit->second.v / bc2).sqrt() + eps_);
  }
}

void SgdMomentum::step(ParamStore& store, const std::vector<std::string>& names) {
  for (const auto& name : names) {
    auto& p = store.params.at(name);
    Tensor& val = p.mutable_val();
    const Tensor& g = p.grad();
    if (g.numel() != val.numel()) throw NumericalError("sgd: missing gradient for " + name);
    auto [vit, inserted] = vel_.try_emplace(name, Tensor::zeros(val.shape));
    Eigen::ArrayXd geff = g.v + wd_ * val.v;
    vit->second.v = momentum_ * vit->second.v + geff;
    val.v -= lr_ * vit->second.v;
  }
}

void RmspropOpt::step(ParamStore& store, const std::vector<std::string>& names) {
  for (const auto& name : names) {
    auto& p = store.params.at(name);
    Tensor& val = p.mutable_val();
    const Tensor& g = p.grad();
    if (g.numel() != val.numel()) throw NumericalError("rmsprop: missing gradient for " + name);
    auto [sit, sinserted] = sq_.try_emplace(name, Tensor::zeros(val.shape));
    auto [vit, vinserted] = vel_.try_emplace(name, Tensor::zeros(val.shape));
    Eigen::ArrayXd geff = g.v + wd_ * val.v;
    sit->second.v = alpha_ * sit->second.v + (1.0 - alpha_) * geff.square();
    vit->second.v = momentum_ * vit->second.v + geff / (sit->second.v.sqrt() + eps_);
    val.v -= lr_ * vit->second.v;
  }
}

namespace {

constexpr char kMagic[] = "AWCK";
constexpr uint32_t kVersion = 1;

json shape_to_json(const std::vector<int>& s) { return json(s); }

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header;
  header["version"] = kVersion;
  header["spec"] = {{"backbone", ckpt.spec.backbone == Backbone::small_cnn ? "small_cnn" : "resnet18"},
                    {"input_channels", ckpt.spec.input_channels},
                    {"feature_dim", ckpt.spec.feature_dim},
                    {"projection_dim", ckpt.spec.projection_dim}};
  header["seed"] = ckpt.seed;
  header["taxonomy_hash"] = ckpt.taxonomy_hash;
  header["config_hash"] = ckpt.config_hash;
  header["epoch"] = ckpt.epoch;
  header["step"] = ckpt.step;
  header["meta"] = ckpt.meta;

  json blobs = json::array();
  std::vector<const Tensor*> order;
  for (const auto& name : ckpt.store.order) {
    const Tensor& t = ckpt.store.params.at(name).val();
    blobs.push_back({{"kind", "param"}, {"name", name}, {"shape", shape_to_json(t.shape)}});
    order.push_back(&t);
  }
  for (const auto& name : ckpt.store.buffer_order) {
    const Tensor& t = ckpt.store.buffers.at(name);
    blobs.push_back({{"kind", "buffer"}, {"name", name}, {"shape", shape_to_json(t.shape)}});
    order.push_back(&t);
  }
  for (const auto& [name, t] : ckpt.opt_state) {
    blobs.push_back({{"kind", "opt"}, {"name", name}, {"shape", shape_to_json(t.shape)}});
    order.push_back(&t);
  }
  header["blobs"] = std::move(blobs);

  const std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot open for write: " + path.string());
  out.write(kMagic, 4);
  const uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const Tensor* t : order)
    out.write(reinterpret_cast<const char*>(t->v.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t->v.size())));
  if (!out) throw IoError("checkpoint: write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != kMagic) throw ParseError("checkpoint: bad magic in " + path.string());
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw ParseError("checkpoint: truncated header in " + path.string());
  json header = json::parse(htext, nullptr, false);
  if (header.is_discarded()) throw ParseError("checkpoint: invalid header in " + path.string());
  if (header.at("version").get<uint32_t>() != kVersion)
    throw ParseError("checkpoint: unsupported version in " + path.string());

  Checkpoint ckpt;
  const auto& spec = header.at("spec");
  ckpt.spec.backbone = spec.at("backbone").get<std::string>() == "small_cnn" ? Backbone::small_cnn
                                                                             : Backbone::resnet18;
  ckpt.spec.input_channels = spec.at("input_channels").get<int>();
  ckpt.spec.feature_dim = spec.at("feature_dim").get<int>();
  ckpt.spec.projection_dim = spec.at("projection_dim").get<int>();
  ckpt.seed = header.at("seed").get<uint64_t>();
  ckpt.taxonomy_hash = header.at("taxonomy_hash").get<uint64_t>();
  ckpt.config_hash = header.at("config_hash").get<uint64_t>();
  ckpt.epoch = header.at("epoch").get<int>();
  ckpt.step = header.at("step").get<int>();
  if (header.contains("meta"))
    ckpt.meta = header.at("meta").get<std::map<std::string, double>>();

  for (const auto& blob : header.at("blobs")) {
    const std::string kind = blob.at("kind").get<std::string>();
    const std::string name = blob.at("name").get<std::string>();
    Tensor t = Tensor::zeros(blob.at("shape").get<std::vector<int>>());
    in.read(reinterpret_cast<char*>(t.v.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.v.size())));
    if (!in) throw ParseError("checkpoint: truncated blob " + name + " in " + path.string());
    if (kind == "param") {
      ckpt.store.add_param(name, std::move(t));
    } else if (kind == "buffer") {
      ckpt.store.add_buffer(name, std::move(t));
    } else {
      ckpt.opt_state.emplace(name, std::move(t));
    }
  }
  return ckpt;
}

}  // namespace awcl
