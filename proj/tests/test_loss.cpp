#include <doctest.h>

#include <cmath>
#include <vector>

#include "eclseq/loss.hpp"
#include "oracles.hpp"

using namespace eclseq;

namespace {

using Vecs = std::vector<std::vector<double>>;

double vcos(const std::vector<double>& u, const std::vector<double>& v) {
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

// Plain-double InfoNCE over cosine similarities, written from the definition.
double ref_icl(const Vecs& anchors, const Vecs& positives, double tau,
               IclGeneratorRole role = IclGeneratorRole::None, const Vecs* gen = nullptr) {
  const size_t B = anchors.size();
  auto one = [&](const Vecs& pos) {
    double total = 0.0;
    for (size_t i = 0; i < B; ++i) {
      std::vector<double> row;
      for (size_t j = 0; j < B; ++j)
        row.push_back((i == j ? vcos(anchors[i], pos[i]) : vcos(anchors[i], anchors[j])) / tau);
      if (role == IclGeneratorRole::ExtraNegative)
        for (size_t j = 0; j < B; ++j) row.push_back(vcos(anchors[i], (*gen)[j]) / tau);
      double denom = 0.0;
      for (const double z : row) denom += std::exp(z);
      total += -std::log(std::exp(row[i]) / denom);
    }
    return total / static_cast<double>(B);
  };
  if (role == IclGeneratorRole::ExtraPositive) return 0.5 * (one(positives) + one(*gen));
  return one(positives);
}

std::vector<Tensor> to_tensors(const Vecs& rows) {
  std::vector<Tensor> out;
  for (const auto& r : rows) out.push_back(Tensor::vector(r, true));
  return out;
}

}  // namespace

TEST_SUITE("loss") {

TEST_CASE("next-item loss matches a plain-double reference") {
  ModelConfig cfg;
  cfg.item_count = 3;
  cfg.l_max = 4;
  cfg.d = 2;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.dropout_rate = 0.0;
  EclsrModel m(cfg);
  auto& emb = m.params().at("embed.item");
  // Rows: pad, e1=(1,0), e2=(0,1), e3=(1,1), mask.
  emb.data() = {0, 0, 1, 0, 0, 1, 1, 1, 0, 0};

  const Sequence seq = make_sequence(1, {1, 2, 3}, 4);
  const Tensor hidden = Tensor::from_data({4, 2}, {9, 9, 0, 5, 2, -1, 0.5, 0.5});
  const Tensor loss = rec_loss(hidden, seq, m);

  // Positions (0,5) and (2,-1) predict items 2 and 3.
  double expect = 0.0;
  const double rows[2][2] = {{0, 5}, {2, -1}};
  const int targets[2] = {2, 3};
  for (int t = 0; t < 2; ++t) {
    const double logits[3] = {rows[t][0], rows[t][1], rows[t][0] + rows[t][1]};
    double denom = 0.0;
    for (const double l : logits) denom += std::exp(l);
    expect += -std::log(std::exp(logits[targets[t] - 1]) / denom) / 2.0;
  }
  CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-12));

  CHECK_THROWS_AS(rec_loss(hidden, make_sequence(1, {1}, 4), m), LossError);
  CHECK_THROWS_AS(rec_loss(Tensor::zeros({3, 2}), seq, m), LossError);
}

TEST_CASE("indistinguishable items price the next-item loss at log N") {
  ModelConfig cfg;
  cfg.item_count = 7;
  cfg.l_max = 5;
  cfg.d = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  EclsrModel m(cfg);
  auto& emb = m.params().at("embed.item");
  for (size_t r = 1; r <= 7; ++r)
    for (size_t c = 0; c < 4; ++c) emb.data()[r * 4 + c] = 0.3 * static_cast<double>(c) - 0.2;

  Rng rng(4);
  Tensor hidden = Tensor::zeros({5, 4});
  for (auto& v : hidden.data()) v = rng.normal(0.0, 1.0);
  const Tensor loss = rec_loss(hidden, make_sequence(1, {1, 5, 2, 7}, 5), m);
  CHECK(std::abs(loss.value() - std::log(7.0)) < 1e-9);
}

TEST_CASE("contrastive loss on orthogonal anchors hits the closed form") {
  const Vecs anchors = {{1, 0}, {0, 1}};
  const Tensor loss = icl_loss(to_tensors(anchors), to_tensors(anchors), 1.0);
  CHECK(std::abs(loss.value() - std::log(1.0 + std::exp(-1.0))) < 1e-5);
}

TEST_CASE("contrastive loss matches the plain-double reference") {
  const Vecs anchors = {{1.0, 0.2, -0.5}, {-0.3, 0.9, 0.1}, {0.4, 0.4, 0.7}};
  const Vecs positives = {{0.9, 0.1, -0.4}, {-0.2, 1.1, 0.0}, {0.5, 0.3, 0.8}};
  const Vecs gen = {{0.2, -0.7, 0.3}, {1.0, 1.0, -1.0}, {-0.6, 0.2, 0.2}};

  for (const double tau : {1.0, 0.2, 0.05}) {
    const Tensor base = icl_loss(to_tensors(anchors), to_tensors(positives), tau);
    CHECK(base.value() == doctest::Approx(ref_icl(anchors, positives, tau)).epsilon(1e-10));

    std::vector<Tensor> gt = to_tensors(gen);
    const Tensor plus = icl_loss(to_tensors(anchors), to_tensors(positives), tau,
                                 IclGeneratorRole::ExtraPositive, &gt);
    CHECK(plus.value() ==
          doctest::Approx(ref_icl(anchors, positives, tau, IclGeneratorRole::ExtraPositive, &gen))
              .epsilon(1e-10));

    const Tensor minus = icl_loss(to_tensors(anchors), to_tensors(positives), tau,
                                  IclGeneratorRole::ExtraNegative, &gt);
    CHECK(minus.value() ==
          doctest::Approx(ref_icl(anchors, positives, tau, IclGeneratorRole::ExtraNegative, &gen))
              .epsilon(1e-10));
    // Extra in-batch negatives can only add competing mass.
    CHECK(minus.value() > base.value());
  }
}

TEST_CASE("contrastive loss contract violations throw") {
  const Vecs one = {{1, 0}};
  const Vecs two = {{1, 0}, {0, 1}};
  CHECK_THROWS_AS(icl_loss(to_tensors(one), to_tensors(one), 1.0), LossError);
  CHECK_THROWS_AS(icl_loss(to_tensors(two), to_tensors(one), 1.0), LossError);
  CHECK_THROWS_AS(icl_loss(to_tensors(two), to_tensors(two), 0.0), LossError);
  CHECK_THROWS_AS(icl_loss(to_tensors(two), to_tensors(two), 1.0,
                           IclGeneratorRole::ExtraPositive, nullptr),
                  LossError);
}

TEST_CASE("contrastive gradients flow into the anchors") {
  std::vector<Tensor> anchors = to_tensors({{1.0, 0.3}, {-0.2, 0.8}});
  std::vector<Tensor> positives = to_tensors({{0.9, 0.4}, {-0.1, 0.7}});
  backward(icl_loss(anchors, positives, 0.5));
  double g = 0.0;
  for (const auto& a : anchors)
    for (const double v : a.grad()) g += std::abs(v);
  CHECK(g > 0.0);
}

TEST_CASE("masked-fill loss per position") {
  const Sequence seq = make_sequence(1, {4, 2, 3}, 5);
  MaskPlan plan;
  plan.gamma = 0.4;
  plan.flags = {true, false, true};  // items 4 and 3

  const Tensor logits = Tensor::from_data({2, 4}, {0, 0, 0, 2, 1, 1, 5, 1});
  double expect = 0.0;
  {
    const double r0[4] = {0, 0, 0, 2}, r1[4] = {1, 1, 5, 1};
    double d0 = 0.0, d1 = 0.0;
    for (int j = 0; j < 4; ++j) {
      d0 += std::exp(r0[j]);
      d1 += std::exp(r1[j]);
    }
    expect = 0.5 * (-std::log(std::exp(r0[3]) / d0) - std::log(std::exp(r1[2]) / d1));
  }
  CHECK(gen_loss(logits, plan, seq).value() == doctest::Approx(expect).epsilon(1e-12));

  // Uniform logits price every fill at log of the catalog size.
  CHECK(gen_loss(Tensor::zeros({2, 4}), plan, seq).value() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  MaskPlan empty;
  empty.flags = {false, false, false};
  CHECK_THROWS_AS(gen_loss(logits, empty, seq), LossError);
  CHECK_THROWS_AS(gen_loss(Tensor::zeros({1, 4}), plan, seq), LossError);
}

TEST_CASE("detection loss scores kept and replaced positions") {
  const Sequence orig = make_sequence(1, {1, 2, 3, 4}, 6);
  Sequence subbed = orig;
  subbed.items[3] = 9;  // second real position replaced

  const Tensor scores = Tensor::from_data({4}, {0.9, 0.3, 0.8, 0.6});
  // Positions 1..3 scored: labels (replaced->0, kept->1, kept->1).
  const double expect =
      -(std::log(1.0 - 0.3) + std::log(0.8) + std::log(0.6)) / 3.0;
  CHECK(rid_loss(scores, subbed, orig).value() == doctest::Approx(expect).epsilon(1e-12));

  const double expect_all = -(std::log(0.9) + std::log(1.0 - 0.3) + std::log(0.8) +
                              std::log(0.6)) /
                            4.0;
  CHECK(rid_loss(scores, subbed, orig, true).value() ==
        doctest::Approx(expect_all).epsilon(1e-12));

  // A coin-flip discriminator prices every position at log 2.
  CHECK(std::abs(rid_loss(Tensor::full({4}, 0.5), orig, orig).value() - std::log(2.0)) < 1e-12);

  // Saturated scores are clamped, not infinite.
  const Tensor hard = Tensor::from_data({4}, {1.0, 0.0, 1.0, 1.0});
  CHECK(std::isfinite(rid_loss(hard, subbed, orig).value()));

  CHECK_THROWS_AS(rid_loss(Tensor::zeros({3}), subbed, orig), LossError);
  CHECK_THROWS_AS(rid_loss(scores, make_sequence(1, {1, 2, 3}, 6), orig), LossError);
  const Sequence single = make_sequence(1, {5}, 2);
  CHECK_THROWS_AS(rid_loss(Tensor::full({1}, 0.5), single, single), LossError);
}

TEST_CASE("combine weighs exactly the active terms") {
  std::map<std::string, Tensor> terms;
  terms.emplace("rec", Tensor::scalar(1.0, true));
  terms.emplace("icl", Tensor::scalar(2.0, true));
  terms.emplace("gen", Tensor::scalar(3.0, true));
  terms.emplace("rid", Tensor::scalar(4.0, true));

  LossWeights w;
  w.rec_active = w.icl_active = w.gen_active = w.rid_active = true;
  w.lambda_icl = 0.3;
  w.lambda_gen = 0.2;
  w.lambda_rid = 0.1;
  LossReport rep;
  const Tensor total = combine(terms, w, &rep);
  CHECK(total.value() == doctest::Approx(1.0 + 0.6 + 0.6 + 0.4).epsilon(1e-12));
  CHECK(rep.total == doctest::Approx(total.value()));
  CHECK(rep.per_term.size() == 4);
  CHECK(rep.per_term.at("gen") == doctest::Approx(3.0));

  // Inactive terms are not even looked up.
  std::map<std::string, Tensor> only_rec;
  only_rec.emplace("rec", Tensor::scalar(1.5, true));
  LossWeights rec_only;
  rec_only.rec_active = true;
  CHECK(combine(only_rec, rec_only, nullptr).value() == doctest::Approx(1.5));

  LossWeights wants_icl = rec_only;
  wants_icl.icl_active = true;
  CHECK_THROWS_AS(combine(only_rec, wants_icl, nullptr), LossError);

  LossWeights none;
  none.rec_active = false;
  CHECK_THROWS_AS(combine(only_rec, none, nullptr), LossError);
}

}  // TEST_SUITE
