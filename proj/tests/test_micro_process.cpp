#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "m2dne/micro_process.hpp"
#include "support/oracle.hpp"
#include "support/synthetic.hpp"

using namespace m2dne;

namespace {

struct Toy {
  Matrix U;
  AttentionParams P;
};

Toy random_toy(std::size_t nodes, std::size_t dim, std::uint64_t seed, double scale = 1.0) {
  Toy toy{Matrix(nodes, dim), AttentionParams(nodes, dim)};
  auto rng = make_stream(seed, "test");
  synthetic::randomize(toy.U, toy.P, rng, scale);
  return toy;
}

}  // namespace

TEST(Similarity, Examples) {
  const std::vector<double> a{1, 0}, b{0, 1};
  EXPECT_DOUBLE_EQ(similarity(a, a), 0.0);
  EXPECT_DOUBLE_EQ(similarity(a, b), -2.0);
  const std::vector<double> c{0.3, -1.7, 2.2}, d{-0.4, 0.1, 5.0};
  EXPECT_DOUBLE_EQ(similarity(c, d), similarity(d, c));
  EXPECT_THROW(similarity(a, c), Error);
}

TEST(TimeDecay, Examples) {
  EXPECT_DOUBLE_EQ(time_decay(0.7, 0), 1.0);
  EXPECT_NEAR(time_decay(1.0, 1.0), 0.3678794, 1e-7);
  EXPECT_LT(time_decay(0.2, 2), time_decay(0.2, 1));
  EXPECT_THROW(time_decay(1.0, -1), Error);
  EXPECT_THROW(time_decay(0.0, 1), Error);
}

TEST(LocalAttention, SingletonAndSymmetricPair) {
  auto toy = random_toy(4, 3, 1);
  EXPECT_EQ(local_attention(0, {{1, 2}}, toy.U, toy.P, 5), std::vector<double>{1.0});
  // neighbors 1 and 2 share an embedding and a time
  for (std::size_t c = 0; c < 3; ++c) toy.U(2, c) = toy.U(1, c);
  const auto w = local_attention(0, {{1, 2}, {2, 2}}, toy.U, toy.P, 5);
  EXPECT_DOUBLE_EQ(w[0], 0.5);
  EXPECT_DOUBLE_EQ(w[1], 0.5);
  EXPECT_THROW(local_attention(0, {}, toy.U, toy.P, 5), Error);
}

TEST(LocalAttention, MatchesOracle) {
  const auto toy = random_toy(5, 2, 2);
  const HistorySnapshot h{{1, 1}, {3, 2}, {4, 4}, {1, 4}};
  const auto got = local_attention(0, h, toy.U, toy.P, 6);
  const auto want = oracle::local_attention(0, h, toy.U, toy.P, 6);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], want[k], 1e-12);
}

TEST(LocalAttention, WeightsFormADistribution) {
  auto rng = make_stream(3, "test");
  for (int trial = 0; trial < 200; ++trial) {
    const auto toy = random_toy(6, 4, 100 + trial, 2.0);
    const auto h = synthetic::random_history(1 + uniform_index(rng, 5), 6, 10, rng);
    const auto w = local_attention(0, h, toy.U, toy.P, 10);
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-9);
    for (double x : w) {
      EXPECT_GT(x, 0.0);
      EXPECT_LE(x, 1.0);
    }
  }
}

TEST(AggregateNeighborhood, Examples) {
  auto toy = random_toy(3, 2, 4);
  const HistorySnapshot one{{1, 1}};
  const auto single = aggregate_neighborhood(one, std::vector<double>{1.0}, toy.U, toy.P);
  for (std::size_t r = 0; r < 2; ++r) {
    const double z = toy.P.local_weight(r, 0) * toy.U(1, 0) + toy.P.local_weight(r, 1) * toy.U(1, 1);
    EXPECT_NEAR(single[r], oracle::sig(z), 1e-15);
  }
  toy.P.local_weight.fill(0.0);
  for (double x : aggregate_neighborhood({{1, 1}, {2, 1}}, std::vector<double>{0.3, 0.7}, toy.U, toy.P)) {
    EXPECT_DOUBLE_EQ(x, 0.5);
  }
  EXPECT_THROW(aggregate_neighborhood(one, std::vector<double>{0.5, 0.5}, toy.U, toy.P), Error);
}

TEST(GlobalAttention, SymmetricInputsGiveOneHalf) {
  auto toy = random_toy(4, 3, 5);
  for (std::size_t c = 0; c < 3; ++c) toy.U(1, c) = toy.U(0, c);
  toy.P.decay_raw[1] = toy.P.decay_raw[0];
  const HistorySnapshot h{{2, 1}, {3, 2}};
  EXPECT_DOUBLE_EQ(global_attention(0, 1, h, h, toy.U, toy.P, 4), 0.5);
}

TEST(GlobalAttention, SwapComplementsAndMatchesOracle) {
  const auto toy = random_toy(5, 3, 6);
  const HistorySnapshot hi{{2, 1}, {3, 2}}, hj{{4, 1}, {2, 3}, {1, 3}};
  const double b = global_attention(0, 1, hi, hj, toy.U, toy.P, 4);
  EXPECT_NEAR(b + global_attention(1, 0, hj, hi, toy.U, toy.P, 4), 1.0, 1e-12);
  const double bi = oracle::beta_tilde(0, hi, toy.U, toy.P, 4);
  const double bj = oracle::beta_tilde(1, hj, toy.U, toy.P, 4);
  EXPECT_NEAR(b, std::exp(bi) / (std::exp(bi) + std::exp(bj)), 1e-12);
  EXPECT_THROW(global_attention(0, 1, {}, hj, toy.U, toy.P, 4), Error);
}

TEST(IntensityRaw, BothHistoriesEmptyIsTheBaseTerm) {
  const auto toy = random_toy(3, 4, 7);
  EXPECT_DOUBLE_EQ(intensity_raw(0, 1, 3, {}, {}, toy.U, toy.P),
                   similarity(toy.U.row(0), toy.U.row(1)));
}

TEST(IntensityRaw, CoincidentEmbeddingsGiveZero) {
  auto toy = random_toy(4, 3, 8);
  for (std::size_t r = 1; r < 4; ++r) {
    for (std::size_t c = 0; c < 3; ++c) toy.U(r, c) = toy.U(0, c);
  }
  EXPECT_DOUBLE_EQ(intensity_raw(0, 1, 5, {{2, 1}, {3, 4}}, {{3, 2}}, toy.U, toy.P), 0.0);
}

TEST(IntensityRaw, OneSidedHistoryPutsAllWeightThere) {
  const auto toy = random_toy(4, 3, 9);
  const HistorySnapshot hi{{2, 1}, {3, 2}};
  const double base = similarity(toy.U.row(0), toy.U.row(1));
  EXPECT_NEAR(intensity_raw(0, 1, 4, hi, {}, toy.U, toy.P),
              base + oracle::influence(0, 1, hi, toy.U, toy.P, 4), 1e-12);
  EXPECT_NEAR(intensity_raw(1, 0, 4, {}, hi, toy.U, toy.P),
              base + oracle::influence(0, 1, hi, toy.U, toy.P, 4), 1e-12);
}

TEST(IntensityRaw, MatchesOracleOnRandomStates) {
  auto rng = make_stream(10, "test");
  for (int trial = 0; trial < 50; ++trial) {
    const auto toy = random_toy(6, 3, 200 + trial);
    const auto hi = synthetic::random_history(uniform_index(rng, 4), 6, 8, rng);
    const auto hj = synthetic::random_history(uniform_index(rng, 4), 6, 8, rng);
    EXPECT_NEAR(intensity_raw(0, 1, 8, hi, hj, toy.U, toy.P), oracle::intensity_raw(0, 1, 8, hi, hj, toy.U, toy.P),
                1e-10);
  }
}

TEST(IntensityRaw, RejectsUnknownIdsAndFutureHistory) {
  const auto toy = random_toy(3, 2, 11);
  EXPECT_THROW(intensity_raw(0, 7, 2, {}, {}, toy.U, toy.P), Error);
  EXPECT_THROW(intensity_raw(0, 1, 2, {{2, 3}}, {}, toy.U, toy.P), Error);
}

TEST(Intensity, PositiveAndExponential) {
  Matrix U(2, 1, 0.0);
  AttentionParams P(2, 1);
  EXPECT_DOUBLE_EQ(intensity(0, 1, 1, {}, {}, U, P), 1.0);
  U(1, 0) = std::sqrt(2.0);
  EXPECT_NEAR(intensity(0, 1, 1, {}, {}, U, P), 0.1353352832366127, 1e-12);
  auto rng = make_stream(12, "test");
  for (int trial = 0; trial < 1000; ++trial) {
    const auto toy = random_toy(5, 3, 300 + trial, 3.0);
    const auto hi = synthetic::random_history(uniform_index(rng, 4), 5, 6, rng);
    const auto hj = synthetic::random_history(uniform_index(rng, 4), 5, 6, rng);
    EXPECT_GT(intensity(0, 1, 6, hi, hj, toy.U, toy.P), 0.0);
  }
}

TEST(Intensity, ClampBoundsAndCounts) {
  Matrix U(2, 1, 0.0);
  U(1, 0) = 20.0;  // raw = -400
  AttentionParams P(2, 1);
  IntensityModel model(U, P, 50.0);
  EXPECT_DOUBLE_EQ(model.clamped_raw(0, 1, 1, {}, {}), -50.0);
  EXPECT_EQ(model.clamp_events(), 1u);
  EXPECT_DOUBLE_EQ(intensity(0, 1, 1, {}, {}, U, P, 10.0), std::exp(-10.0));
}

TEST(IntensityRaw, PermutationEquivariant) {
  const auto toy = random_toy(5, 3, 13);
  const std::vector<NodeId> perm{3, 0, 4, 1, 2};  // old id -> new id
  Toy moved{Matrix(5, 3), AttentionParams(5, 3)};
  moved.P = toy.P;
  for (NodeId v = 0; v < 5; ++v) {
    for (std::size_t c = 0; c < 3; ++c) moved.U(perm[v], c) = toy.U(v, c);
    moved.P.decay_raw[perm[v]] = toy.P.decay_raw[v];
  }
  const HistorySnapshot hi{{2, 1}, {3, 2}}, hj{{4, 2}};
  auto relabel = [&](const HistorySnapshot& h) {
    HistorySnapshot out;
    for (const auto& e : h) out.push_back({perm[e.neighbor], e.time});
    return out;
  };
  EXPECT_NEAR(intensity_raw(0, 1, 3, hi, hj, toy.U, toy.P),
              intensity_raw(perm[0], perm[1], 3, relabel(hi), relabel(hj), moved.U, moved.P), 1e-12);
}

TEST(EventProbability, MutualHistoriesGiveOneHalf) {
  const auto toy = random_toy(2, 3, 14);
  EXPECT_NEAR(event_probability_full(0, 1, 2, {{1, 1}}, {{0, 1}}, toy.U, toy.P), 0.5, 1e-15);
  EXPECT_THROW(event_probability_full(0, 1, 2, {}, {}, toy.U, toy.P), Error);
}

TEST(EventProbability, MatchesOracleOnFourNodeStream) {
  const auto toy = random_toy(4, 2, 15);
  for (const auto& s : build_history_stream(synthetic::four_node_network(), 2)) {
    if (s.source_history.empty() && s.target_history.empty()) continue;
    const auto& e = s.event;
    EXPECT_NEAR(event_probability_full(e.source, e.target, e.time, s.source_history, s.target_history, toy.U, toy.P),
                oracle::event_probability_full(e.source, e.target, e.time, s.source_history, s.target_history,
                                               toy.U, toy.P),
                1e-10);
  }
}

TEST(MicroLossFull, Examples) {
  const auto toy = random_toy(4, 2, 16);
  EXPECT_EQ(micro_loss_full(std::vector<EventSnapshot>{}, toy.U, toy.P), 0.0);
  const std::vector<EventSnapshot> half{{{0, 1, 2, 1.0}, {{1, 1}}, {{0, 1}}}};
  EXPECT_NEAR(micro_loss_full(half, toy.U, toy.P), std::log(2.0), 1e-12);

  const auto stream = build_history_stream(synthetic::four_node_network(), 2);
  std::size_t skipped = 0;
  EXPECT_NEAR(micro_loss_full(stream, toy.U, toy.P, &skipped), oracle::micro_loss_full(stream, toy.U, toy.P), 1e-10);
  EXPECT_EQ(skipped, 2u);  // both epoch-1 events start from empty histories
}

TEST(MicroLossFull, GradientStepDescends) {
  const auto toy = random_toy(4, 3, 17, 0.5);
  const auto stream = build_history_stream(synthetic::four_node_network(), 2);
  IntensityModel model(toy.U, toy.P);
  MicroGradient g(4, 3);
  const double before = micro_loss_full(stream, model, nullptr, &g);
  g.finalize(toy.U, toy.P);
  Toy next = toy;
  const double lr = 1e-4;
  for (std::size_t k = 0; k < next.U.size(); ++k) next.U.data()[k] -= lr * g.embeddings.data()[k];
  for (std::size_t k = 0; k < next.P.att_vector.size(); ++k) next.P.att_vector[k] -= lr * g.attention.att_vector[k];
  for (std::size_t k = 0; k < next.P.local_weight.size(); ++k) {
    next.P.local_weight.data()[k] -= lr * g.attention.local_weight.data()[k];
  }
  for (std::size_t k = 0; k < next.P.s_weight.size(); ++k) next.P.s_weight[k] -= lr * g.attention.s_weight[k];
  for (std::size_t k = 0; k < next.P.decay_raw.size(); ++k) next.P.decay_raw[k] -= lr * g.attention.decay_raw[k];
  EXPECT_LT(micro_loss_full(stream, next.U, next.P), before);
}

TEST(NegativeSampler, DegreeFrequency) {
  auto rng = make_stream(18, "negatives");
  const std::vector<double> degrees{8, 1};
  NegativeSampler sampler(degrees);
  std::size_t zero = 0;
  const std::size_t draws = 100000;
  for (std::size_t k = 0; k < draws; ++k) zero += sampler.draw(rng) == 0 ? 1 : 0;
  const double expected = std::pow(8.0, 0.75) / (std::pow(8.0, 0.75) + 1.0);
  EXPECT_NEAR(expected, 0.826, 1e-3);
  EXPECT_NEAR(static_cast<double>(zero) / draws, expected, 0.01);
  EXPECT_NEAR(sampler.probability(0), expected, 1e-15);
}

TEST(NegativeSampler, ExclusionAndErrors) {
  auto rng = make_stream(19, "negatives");
  const std::vector<double> two{3, 5};
  const std::vector<NodeId> partner{1};
  const auto out = sample_negatives(two, 7, rng, partner);
  EXPECT_EQ(out.size(), 7u);
  for (NodeId n : out) EXPECT_EQ(n, 0u);
  EXPECT_THROW(sample_negatives(std::vector<double>{4}, 1, rng), Error);
  EXPECT_THROW(sample_negatives(two, 0, rng), Error);
  const std::vector<NodeId> both{0, 1};
  EXPECT_THROW(sample_negatives(two, 1, rng, both), Error);
}

TEST(MicroLossSampled, NoNegativesReducesToPositiveTerms) {
  const auto toy = random_toy(4, 2, 20);
  const auto stream = build_history_stream(synthetic::four_node_network(), 2);
  const std::vector<NegativeDraws> none(stream.size());
  IntensityModel model(toy.U, toy.P);
  double want = 0;
  for (const auto& s : stream) {
    want -= std::log(oracle::sig(oracle::intensity_raw(s.event.source, s.event.target, s.event.time,
                                                       s.source_history, s.target_history, toy.U, toy.P)));
  }
  EXPECT_NEAR(micro_loss_sampled(stream, none, model), want, 1e-10);

  Matrix U(2, 1, 0.0);
  AttentionParams P(2, 1);
  const std::vector<EventSnapshot> one{{{0, 1, 1, 1.0}, {}, {}}};
  EXPECT_NEAR(micro_loss_sampled(one, std::vector<NegativeDraws>(1), IntensityModel(U, P)), std::log(2.0), 1e-15);
}

TEST(MicroLossSampled, ReplaysTheSameStream) {
  const auto toy = random_toy(4, 2, 21);
  const auto net = synthetic::four_node_network();
  const auto stream = build_history_stream(net, 2);
  NegativeSampler sampler(event_degrees(net));
  IntensityModel model(toy.U, toy.P);
  auto rng = make_stream(5, "negatives");
  const double got = micro_loss_sampled(stream, 3, rng, sampler, model);

  auto replay = make_stream(5, "negatives");
  double want = 0;
  for (const auto& s : stream) {
    const NodeId ends[2] = {s.event.source, s.event.target};
    std::vector<NodeId> src(3), dst(3);
    for (auto& n : src) n = sampler.draw(replay, ends);
    for (auto& n : dst) n = sampler.draw(replay, ends);
    auto raw = [&](NodeId x, NodeId y) {
      return oracle::intensity_raw(x, y, s.event.time, s.source_history, s.target_history, toy.U, toy.P);
    };
    want -= std::log(oracle::sig(raw(s.event.source, s.event.target)));
    for (NodeId n : src) want -= std::log(oracle::sig(-raw(n, s.event.target)));
    for (NodeId n : dst) want -= std::log(oracle::sig(-raw(s.event.source, n)));
  }
  EXPECT_NEAR(got, want, 1e-10);
}

TEST(MicroLossSampled, NegativesNeverHitTheEventEndpoints) {
  const auto net = synthetic::four_node_network();
  const auto stream = build_history_stream(net, 2);
  NegativeSampler sampler(event_degrees(net));
  auto rng = make_stream(6, "negatives");
  const auto draws = draw_negatives(stream, sampler, 4, rng);
  for (std::size_t b = 0; b < stream.size(); ++b) {
    for (const auto* side : {&draws[b].sources, &draws[b].targets}) {
      EXPECT_EQ(side->size(), 4u);
      for (NodeId n : *side) {
        EXPECT_NE(n, stream[b].event.source);
        EXPECT_NE(n, stream[b].event.target);
      }
    }
  }
}
