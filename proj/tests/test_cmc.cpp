#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "histgen/cmc.hpp"
#include "testutil.hpp"

using namespace histgen;
using ad::Matrix;
using ad::Var;
namespace tu = testutil;

namespace {

CmcConfig toy_cmc(int m = 6, int l = 3, int heads = 2) {
  CmcConfig cfg;
  cfg.memory_slots = m;
  cfg.prototypes = l;
  cfg.heads = heads;
  return cfg;
}

}  // namespace

TEST_CASE("select_prototypes: output length is l regardless of input length") {
  nn::ParamStore store(1);
  CmcModule cmc(store, toy_cmc(6, 3), 8);
  for (int n : {1, 10, 1000}) {
    Var x = ad::constant(tu::random_matrix(n, 8, 100 + static_cast<std::uint64_t>(n)));
    Var sel = cmc.select_prototypes(x);
    CHECK(sel->rows() == 3);
    CHECK(sel->cols() == 8);
  }
  CHECK_THROWS(cmc.select_prototypes(ad::constant(Matrix(0, 8))));
}

TEST_CASE("select_prototypes: single input vector gets attention weight 1") {
  nn::ParamStore store(2);
  CmcModule cmc(store, toy_cmc(6, 3), 8);
  Var x = ad::constant(tu::random_matrix(1, 8, 103));
  nn::AttentionProbe probe;
  Var attn;
  cmc.select_prototypes(x, &attn, &probe);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(probe.mean_weights(i, 0) == doctest::Approx(1.0));
}

TEST_CASE("duplicating every input vector leaves prototype selection unchanged") {
  nn::ParamStore store(3);
  CmcModule cmc(store, toy_cmc(6, 3), 8);
  Matrix x = tu::random_matrix(5, 8, 104);
  Matrix doubled(10, 8);
  doubled << x, x;
  Var s1 = cmc.select_prototypes(ad::constant(x));
  Var s2 = cmc.select_prototypes(ad::constant(doubled));
  CHECK(s1->value.isApprox(s2->value, 1e-10));
}

TEST_CASE("query_memory: m=1 response ignores the query and equals the value projection") {
  nn::ParamStore store(4);
  CmcModule cmc(store, toy_cmc(1, 2), 8);
  nn::AttentionProbe probe;
  Var r1 = cmc.query_memory(ad::constant(tu::random_matrix(4, 8, 105)), &probe);
  Var r2 = cmc.query_memory(ad::constant(tu::random_matrix(4, 8, 106)));
  CHECK(r1->value.isApprox(r2->value, 1e-12));
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(probe.mean_weights(i, 0) == doctest::Approx(1.0));
  for (int i = 1; i < 4; ++i) CHECK(r1->value.row(i).isApprox(r1->value.row(0), 1e-12));
}

TEST_CASE("memory attention weights sum to one") {
  nn::ParamStore store(5);
  CmcModule cmc(store, toy_cmc(6, 3), 8);
  nn::AttentionProbe probe;
  cmc.query_memory(ad::constant(tu::random_matrix(5, 8, 107)), &probe);
  for (Eigen::Index i = 0; i < 5; ++i) {
    CHECK(probe.mean_weights.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    for (Eigen::Index j = 0; j < probe.mean_weights.cols(); ++j)
      CHECK(probe.mean_weights(i, j) >= 0.0);
  }
}

TEST_CASE("zero gates make both passes exact identities") {
  nn::ParamStore store(6);
  CmcModule cmc(store, toy_cmc(), 8);
  Matrix x = tu::random_matrix(7, 8, 108);
  Var out_v = cmc.visual_pass(ad::constant(x));
  CHECK(out_v->value == x);  // bitwise: x + 0*proj
  Var out_t = cmc.textual_pass(ad::constant(x));
  CHECK(out_t->value == x);
}

TEST_CASE("gate=1 with zeroed responses is also the identity") {
  nn::ParamStore store(7);
  CmcModule cmc(store, toy_cmc(), 8);
  store.get("cmc.vis_gate")->value.setOnes();
  // Zero value projection + zero output bias in the memory attention and a
  // zero response projection force responses to contribute nothing.
  store.get("cmc.vis_proj.w")->value.setZero();
  store.get("cmc.vis_proj.b")->value.setZero();
  Matrix x = tu::random_matrix(4, 8, 109);
  Var out = cmc.visual_pass(ad::constant(x));
  CHECK(out->value == x);
}

TEST_CASE("visual pass preserves shape for any sequence length") {
  nn::ParamStore store(8);
  CmcModule cmc(store, toy_cmc(), 8);
  tu::jitter_params(store, 5);
  for (int n : {1, 4, 33}) {
    Var x = ad::constant(tu::random_matrix(n, 8, 110 + static_cast<std::uint64_t>(n)));
    Var out = cmc.visual_pass(x);
    CHECK(out->rows() == n);
    CHECK(out->cols() == 8);
  }
}

TEST_CASE("textual pass is positionwise: perturbing token j leaves row i != j unchanged") {
  nn::ParamStore store(9);
  CmcModule cmc(store, toy_cmc(), 8);
  tu::jitter_params(store, 6);  // nonzero gates so the pass is not trivially identity
  Matrix y = tu::random_matrix(5, 8, 112);
  Var out1 = cmc.textual_pass(ad::constant(y));
  Matrix y2 = y;
  y2.row(3).setConstant(2.5);
  Var out2 = cmc.textual_pass(ad::constant(y2));
  for (Eigen::Index i = 0; i < 5; ++i) {
    if (i == 3) {
      CHECK_FALSE(out1->value.row(i).isApprox(out2->value.row(i), 1e-9));
    } else {
      CHECK(out1->value.row(i) == out2->value.row(i));
    }
  }
  CHECK_THROWS(cmc.textual_pass(ad::constant(Matrix(0, 8))));
}

TEST_CASE("aggregate shape mismatches are rejected") {
  nn::ParamStore store(10);
  CmcModule cmc(store, toy_cmc(6, 3), 8);
  Var orig = ad::constant(tu::random_matrix(5, 8, 113));
  Var resp = ad::constant(tu::random_matrix(4, 8, 114));
  CHECK_THROWS(cmc.aggregate_textual(orig, resp));
  Var attn = ad::constant(tu::random_matrix(3, 4, 115));  // cols != orig rows
  CHECK_THROWS(cmc.aggregate_visual(orig, ad::constant(tu::random_matrix(3, 8, 116)), attn));
}

TEST_CASE("gradients flow into memory, prototypes and gates (finite differences)") {
  nn::ParamStore store(11);
  CmcModule cmc(store, toy_cmc(4, 2, 2), 6);
  tu::jitter_params(store, 7);  // move gates off zero so memory gradients are live
  Matrix x = tu::random_matrix(5, 6, 117);
  auto make_loss = [&] {
    Var out = cmc.visual_pass(ad::constant(x));
    out = cmc.textual_pass(out);
    return ad::mean_all(ad::mul(out, out));
  };
  auto report = tu::finite_diff_check(tu::all_params(store), make_loss);
  INFO(report.worst, " err=", report.max_err);
  CHECK(report.ok());

  // And specifically: the memory matrix receives nonzero gradient.
  store.zero_grads();
  ad::backward(make_loss());
  CHECK(store.get("cmc.memory")->grad.cwiseAbs().maxCoeff() > 0.0);
  CHECK(store.get("cmc.prototypes")->grad.cwiseAbs().maxCoeff() > 0.0);
  CHECK(store.get("cmc.vis_gate")->grad.cwiseAbs().maxCoeff() > 0.0);
  CHECK(store.get("cmc.txt_gate")->grad.cwiseAbs().maxCoeff() > 0.0);
}
