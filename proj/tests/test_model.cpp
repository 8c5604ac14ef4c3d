#include <doctest.h>

#include "awcl/loss.hpp"
#include "awcl/nn.hpp"

using namespace awcl;

namespace {

std::vector<Image> random_images(int n, int h, int w, uint64_t seed) {
  std::vector<Image> out;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    Image im = Image::zeros(h, w);
    for (int64_t k = 0; k < im.numel(); ++k) im.v[k] = rng.uniform();
    out.push_back(std::move(im));
  }
  return out;
}

ParamStore make_small_cnn(const EncoderSpec& spec, uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  init_encoder(spec, store, rng);
  init_projection_head(spec, store, rng);
  return store;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("embed returns one 128-vector per image") {
  const EncoderSpec spec = EncoderSpec::small_cnn();
  ParamStore store = make_small_cnn(spec, 1);
  const auto images = random_images(4, 32, 32, 2);
  const Tensor z = embed_images(spec, store, images);
  CHECK(z.dim(0) == 4);
  CHECK(z.dim(1) == 128);
  CHECK(z.all_finite());
}

TEST_CASE("identical inputs embed identically") {
  const EncoderSpec spec = EncoderSpec::small_cnn();
  ParamStore store = make_small_cnn(spec, 3);
  auto images = random_images(1, 32, 32, 4);
  images.push_back(images[0]);
  const Tensor z = embed_images(spec, store, images);
  for (int d = 0; d < spec.projection_dim; ++d)
    CHECK(z.at({0, d}) == z.at({1, d}));
}

TEST_CASE("small inputs produce finite vectors") {
  const EncoderSpec spec = EncoderSpec::small_cnn();
  ParamStore store = make_small_cnn(spec, 5);
  const Tensor z = embed_images(spec, store, random_images(3, 8, 8, 6));
  CHECK(z.all_finite());
}

TEST_CASE("resnet18 features have width 512 and differ from projections") {
  const EncoderSpec spec = EncoderSpec::resnet18();
  ParamStore store;
  Rng rng(7);
  init_encoder(spec, store, rng);
  init_projection_head(spec, store, rng);
  const auto images = random_images(2, 32, 32, 8);
  const Tensor f = feature_vectors(spec, store, images);
  CHECK(f.dim(0) == 2);
  CHECK(f.dim(1) == 512);
  CHECK(f.all_finite());
  const Tensor z = embed_images(spec, store, images);
  CHECK(z.dim(1) == 128);

  // Frozen params give identical outputs across calls.
  const Tensor f2 = feature_vectors(spec, store, images);
  CHECK((f.v - f2.v).abs().maxCoeff() == 0.0);
}

TEST_CASE("embed is permutation-equivariant over the batch") {
  const EncoderSpec spec = EncoderSpec::small_cnn();
  ParamStore store = make_small_cnn(spec, 9);
  auto images = random_images(5, 16, 16, 10);
  const Tensor z = embed_images(spec, store, images);
  std::vector<Image> perm = {images[3], images[0], images[4], images[1], images[2]};
  const Tensor zp = embed_images(spec, store, perm);
  const int order[] = {3, 0, 4, 1, 2};
  for (int i = 0; i < 5; ++i)
    for (int d = 0; d < spec.projection_dim; ++d)
      CHECK(zp.at({i, d}) == z.at({order[i], d}));
}

TEST_CASE("frozen encoder: one optimizer step changes only the head") {
  const EncoderSpec spec = EncoderSpec::small_cnn();
  ParamStore store = make_small_cnn(spec, 11);
  Rng rng(12);
  init_head(HeadKind::classifier, spec, 4, store, rng);

  const uint64_t enc_before = store.values_hash("enc.");
  const uint64_t head_before = store.values_hash("head.");

  const auto images = random_images(6, 16, 16, 13);
  auto x = ad::Value::constant(images_to_tensor(images, 1));
  auto enc = encoder_forward(spec, store, x, false);
  auto logits = head_forward(HeadKind::classifier, spec, store, enc);
  auto loss = ad::softmax_cross_entropy(logits, {0, 1, 2, 3, 0, 1});
  store.zero_grad();
  ad::backward(loss);
  SgdMomentum sgd(0.1);
  sgd.step(store, store.names_with_prefix("head."));

  CHECK(store.values_hash("enc.") == enc_before);
  CHECK(store.values_hash("head.") != head_before);
}

TEST_CASE("checkpoint save/load restores parameters bit-exactly") {
  const EncoderSpec spec = EncoderSpec::small_cnn();
  Checkpoint ckpt;
  ckpt.spec = spec;
  ckpt.seed = 42;
  ckpt.taxonomy_hash = 1234;
  ckpt.config_hash = 5678;
  ckpt.epoch = 3;
  ckpt.step = 17;
  Rng rng(14);
  init_encoder(spec, ckpt.store, rng);
  init_projection_head(spec, ckpt.store, rng);
  ckpt.opt_state.emplace("adam.m.enc.conv0.w", Tensor::full({8, 1, 3, 3}, 0.25));
  ckpt.meta["adam.t"] = 99;

  const auto path = std::filesystem::temp_directory_path() / "awcl_ckpt_test.bin";
  save_checkpoint(path, ckpt);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.seed == ckpt.seed);
  CHECK(back.epoch == 3);
  CHECK(back.step == 17);
  CHECK(back.meta.at("adam.t") == 99);
  CHECK(back.store.values_hash() == ckpt.store.values_hash());
  CHECK(back.opt_state.at("adam.m.enc.conv0.w").v[0] == 0.25);
  std::filesystem::remove(path);
}

TEST_CASE("segmentation decoder restores full resolution") {
  const EncoderSpec spec = EncoderSpec::small_cnn();
  ParamStore store;
  Rng rng(15);
  init_encoder(spec, store, rng);
  init_head(HeadKind::segmentation_decoder, spec, 3, store, rng);
  const auto images = random_images(2, 16, 16, 16);
  auto x = ad::Value::constant(images_to_tensor(images, 1));
  auto enc = encoder_forward(spec, store, x, false);
  auto logits = head_forward(HeadKind::segmentation_decoder, spec, store, enc);
  CHECK(logits.val().dim(0) == 2);
  CHECK(logits.val().dim(1) == 3);
  CHECK(logits.val().dim(2) == 16);
  CHECK(logits.val().dim(3) == 16);
}

}  // TEST_SUITE
