#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "histgen/lgh.hpp"
#include "testutil.hpp"

using namespace histgen;
using ad::Matrix;
using ad::Var;
namespace tu = testutil;

namespace {

EncoderConfig toy_config(int s = 4, int d = 8, bool pe = true, int global_layers = 1) {
  EncoderConfig cfg;
  cfg.region_size = s;
  cfg.d_model = d;
  cfg.d_in = 6;
  cfg.local_layers = 1;
  cfg.global_layers = global_layers;
  cfg.heads = 2;
  cfg.ffn_dim = 12;
  cfg.pool_hidden = 5;
  cfg.use_positional_encoding = pe;
  return cfg;
}

}  // namespace

TEST_CASE("partition: ceiling arithmetic and padding masks") {
  nn::ParamStore store(1);
  LghEncoder enc(store, toy_config(96, 8));
  // n = 200, S = 96 -> regions of (96, 96, 8) real patches.
  Var projected = ad::constant(tu::random_matrix(200, 8, 50));
  RegionPartition part = enc.partition_regions(projected);
  REQUIRE(part.num_regions() == 3);
  auto real_count = [&](int r) {
    return std::accumulate(part.masks[static_cast<std::size_t>(r)].begin(),
                           part.masks[static_cast<std::size_t>(r)].end(), 0) - 1;
  };
  CHECK(real_count(0) == 96);
  CHECK(real_count(1) == 96);
  CHECK(real_count(2) == 8);
  for (const auto& region : part.regions) {
    CHECK(region->rows() == 97);
    CHECK(region->cols() == 8);
  }
  // Region token slot is never masked.
  for (const auto& mask : part.masks) CHECK(mask[96] == 1);

  Var exact = ad::constant(tu::random_matrix(96, 8, 51));
  CHECK(enc.partition_regions(exact).num_regions() == 1);
}

TEST_CASE("forward shape is ceil(n/S) x d_model across the contract range") {
  nn::ParamStore store(2);
  EncoderConfig cfg = toy_config(4, 8);
  LghEncoder enc(store, cfg);
  for (int n = 1; n <= 4 * cfg.region_size + 1; ++n) {
    Var out = enc.forward(tu::random_features(n, 6, 60 + static_cast<std::uint64_t>(n)));
    CHECK(out->rows() == (n + cfg.region_size - 1) / cfg.region_size);
    CHECK(out->cols() == 8);
    CHECK(out->value.allFinite());
  }
}

TEST_CASE("single patch: N=1, finite output, pooling weights on real slots only") {
  nn::ParamStore store(3);
  LghEncoder enc(store, toy_config(4, 8));
  LghTrace trace;
  Var out = enc.forward(tu::random_features(1, 6, 70), &trace);
  CHECK(out->rows() == 1);
  CHECK(out->value.allFinite());
  REQUIRE(trace.pool_weights.size() == 1);
  const auto& w = trace.pool_weights[0];
  CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-9));
  // Slots 1..3 are padded; only the patch (0) and the region token (4) carry weight.
  CHECK(w(1) == 0.0);
  CHECK(w(2) == 0.0);
  CHECK(w(3) == 0.0);
  CHECK(w(0) + w(4) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("empty bag and dimension mismatch are rejected") {
  nn::ParamStore store(4);
  LghEncoder enc(store, toy_config());
  Eigen::MatrixXf empty(0, 6);
  CHECK_THROWS(enc.forward(empty));
  CHECK_THROWS(enc.forward(tu::random_features(5, 7, 71)));
}

TEST_CASE("masked slots receive zero attention weight in the local pass") {
  nn::ParamStore store(5);
  LghEncoder enc(store, toy_config(4, 8));
  Var projected = ad::constant(tu::random_matrix(6, 8, 72));  // regions: 4 real + 2 real
  RegionPartition part = enc.partition_regions(projected);
  std::vector<nn::AttentionProbe> probes;
  enc.encode_local(part, &probes);
  REQUIRE(probes.size() == 2);
  // Second region: slots 2 and 3 are padding.
  const Matrix& attn = probes[1].mean_weights;
  REQUIRE(attn.rows() == 5);
  for (Eigen::Index q = 0; q < attn.rows(); ++q) {
    CHECK(attn(q, 2) == 0.0);
    CHECK(attn(q, 3) == 0.0);
    CHECK(attn.row(q).sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("gradients with respect to padded-slot inputs are exactly zero") {
  nn::ParamStore store(6);
  EncoderConfig cfg = toy_config(4, 8);
  LghEncoder enc(store, cfg);
  // Handcrafted partition: one region, 2 real patches + 2 padded + token slot.
  Var region = ad::parameter(tu::random_matrix(5, 8, 73));
  RegionPartition part;
  part.n_patches = 2;
  part.region_size = 4;
  part.regions = {region};
  part.masks = {{1, 1, 0, 0, 1}};

  RegionPartition encoded = enc.encode_local(part);
  Var pooled = enc.attentive_pool(encoded.regions[0], part.masks[0]);
  ad::backward(ad::mean_all(ad::mul(pooled, pooled)));
  CHECK(region->grad.row(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(region->grad.row(3).cwiseAbs().maxCoeff() == 0.0);
  CHECK(region->grad.row(0).cwiseAbs().maxCoeff() > 0.0);
  CHECK(region->grad.row(4).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("zero-layer E_g leaves gathered region tokens untouched (PE off)") {
  nn::ParamStore store(7);
  LghEncoder enc(store, toy_config(4, 8, /*pe=*/false, /*global_layers=*/0));
  Var tokens = ad::constant(tu::random_matrix(3, 8, 74));
  Var out = enc.encode_global(tokens);
  CHECK(out.get() == tokens.get());
}

TEST_CASE("encode_global rejects an empty token sequence") {
  nn::ParamStore store(8);
  LghEncoder enc(store, toy_config());
  Var none = ad::constant(Matrix(0, 8));
  CHECK_THROWS(enc.encode_global(none));
}

TEST_CASE("within-region patch permutation leaves X'' unchanged with PE off") {
  nn::ParamStore store(9);
  EncoderConfig cfg = toy_config(4, 8, /*pe=*/false, /*global_layers=*/0);
  LghEncoder enc(store, cfg);
  Eigen::MatrixXf feats = tu::random_features(8, 6, 75);
  Var out1 = enc.forward(feats);

  Eigen::MatrixXf permuted = feats;
  permuted.row(0) = feats.row(2);
  permuted.row(2) = feats.row(3);
  permuted.row(3) = feats.row(0);  // permute inside region 0 only
  Var out2 = enc.forward(permuted);
  CHECK(out1->value.isApprox(out2->value, 1e-10));
}

TEST_CASE("region permutation is equivariant with PE disabled") {
  nn::ParamStore store(10);
  EncoderConfig cfg = toy_config(4, 8, /*pe=*/false);
  LghEncoder enc(store, cfg);
  Eigen::MatrixXf feats = tu::random_features(12, 6, 76);  // 3 full regions
  Var out = enc.forward(feats);

  Eigen::MatrixXf swapped(12, 6);
  swapped.middleRows(0, 4) = feats.middleRows(8, 4);
  swapped.middleRows(4, 4) = feats.middleRows(4, 4);
  swapped.middleRows(8, 4) = feats.middleRows(0, 4);
  Var out_swapped = enc.forward(swapped);

  CHECK(out_swapped->value.row(0).isApprox(out->value.row(2), 1e-10));
  CHECK(out_swapped->value.row(1).isApprox(out->value.row(1), 1e-10));
  CHECK(out_swapped->value.row(2).isApprox(out->value.row(0), 1e-10));
}

TEST_CASE("with PE enabled, permuting patches changes the output") {
  nn::ParamStore store(11);
  LghEncoder enc(store, toy_config(4, 8, /*pe=*/true));
  Eigen::MatrixXf feats = tu::random_features(4, 6, 77);
  Eigen::MatrixXf permuted = feats;
  permuted.row(0) = feats.row(1);
  permuted.row(1) = feats.row(0);
  Var a = enc.forward(feats);
  Var b = enc.forward(permuted);
  CHECK_FALSE(a->value.isApprox(b->value, 1e-8));
}

TEST_CASE("attentive pooling: softmax shift invariance via the score bias") {
  nn::ParamStore store(12);
  EncoderConfig cfg = toy_config(4, 8);
  LghEncoder enc(store, cfg);
  Var region = ad::constant(tu::random_matrix(5, 8, 78));
  std::vector<std::uint8_t> mask{1, 1, 1, 1, 1};
  Var w_before;
  enc.attentive_pool(region, mask, &w_before);
  // Shifting every slot's score by a constant (the shared bias) cannot move
  // the weights.
  store.get("encoder.pool.wb")->value(0, 0) += 3.75;
  Var w_after;
  enc.attentive_pool(region, mask, &w_after);
  CHECK(w_before->value.isApprox(w_after->value, 1e-12));
}

TEST_CASE("region-size sweep executes on n = 1000 and keeps the shape contract") {
  for (int s : {64, 96, 128, 256, 384, 512}) {
    nn::ParamStore store(13);
    EncoderConfig cfg = toy_config(s, 8);
    LghEncoder enc(store, cfg);
    Var out = enc.forward(tu::random_features(1000, 6, 80 + static_cast<std::uint64_t>(s)));
    CHECK(out->rows() == (1000 + s - 1) / s);
    CHECK(out->value.allFinite());
  }
}

TEST_CASE("full encoder gradients vs finite differences on a 2-region instance") {
  nn::ParamStore store(14);
  EncoderConfig cfg = toy_config(3, 6);
  cfg.d_in = 4;
  cfg.heads = 2;
  cfg.ffn_dim = 8;
  cfg.pool_hidden = 4;
  LghEncoder enc(store, cfg);
  tu::jitter_params(store, 999);
  Eigen::MatrixXf feats = tu::random_features(5, 4, 81);  // regions: 3 + 2
  auto make_loss = [&] {
    Var out = enc.forward(feats);
    return ad::mean_all(ad::mul(out, out));
  };
  auto report = tu::finite_diff_check(tu::all_params(store), make_loss);
  INFO(report.worst, " err=", report.max_err);
  CHECK(report.ok());
}
