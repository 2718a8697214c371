#include <gtest/gtest.h>

#include <sstream>

#include "m2dne/temporal_graph.hpp"
#include "support/synthetic.hpp"

using namespace m2dne;

namespace {

TemporalNetwork parse(const std::string& text, ParseOptions opts = {}) {
  std::istringstream in(text);
  return parse_edge_list(in, "inline", opts);
}

}  // namespace

TEST(ParseEdgeList, MinimalInputGetsConsecutiveEpochs) {
  const auto net = parse("a b 10\nb c 10\nc a 20\n");
  EXPECT_EQ(net.node_count(), 3u);
  EXPECT_EQ(net.event_count(), 3u);
  EXPECT_EQ(net.first_epoch(), 1);
  EXPECT_EQ(net.last_epoch(), 2);
  EXPECT_EQ(net.epochs().epoch_count(), 2u);
  EXPECT_DOUBLE_EQ(net.epochs().raw(2), 20.0);
}

TEST(ParseEdgeList, IdsFollowFirstAppearance) {
  const auto net = parse("zeta alpha 3\nalpha mid 1\n");
  EXPECT_EQ(net.registry().raw(0), "zeta");
  EXPECT_EQ(net.registry().raw(1), "alpha");
  EXPECT_EQ(net.registry().raw(2), "mid");
  // events are reordered by time, ids are not
  EXPECT_EQ(net.events()[0].source, 1u);
  EXPECT_EQ(net.events()[0].time, 1);
}

TEST(ParseEdgeList, StableWithinEqualTime) {
  const auto net = parse("a b 5\nc d 1\nb c 5\nd a 5\n");
  ASSERT_EQ(net.event_count(), 4u);
  const auto& ev = net.events();
  EXPECT_EQ(net.registry().raw(ev[1].source), "a");
  EXPECT_EQ(net.registry().raw(ev[2].source), "b");
  EXPECT_EQ(net.registry().raw(ev[3].source), "d");
}

TEST(ParseEdgeList, SelfLoopsAreDroppedAndCounted) {
  const auto net = parse("a a 5\na b 6\n");
  EXPECT_EQ(net.self_loops_dropped, 1u);
  EXPECT_EQ(net.event_count(), 1u);
}

TEST(ParseEdgeList, CommentsAndBlankLinesIgnored) {
  const auto net = parse("# header\n\na b 1  # trailing\n   \nb c 2\n");
  EXPECT_EQ(net.event_count(), 2u);
}

TEST(ParseEdgeList, MalformedLineReportsLineNumber) {
  try {
    parse("a b 1\nb c\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  EXPECT_THROW(parse("a b notatime\n"), ParseError);
  EXPECT_THROW(parse("a b 1 2 3\n"), ParseError);
}

TEST(ParseEdgeList, EmptyInputIsAnError) {
  EXPECT_THROW(parse(""), Error);
  EXPECT_THROW(parse("# only a comment\n"), Error);
}

TEST(ParseEdgeList, WeightsOnlyReadWhenRequested) {
  const auto plain = parse("a b 1 3.5\n");
  EXPECT_DOUBLE_EQ(plain.events()[0].weight, 1.0);
  const auto weighted = parse("a b 1 3.5\n", {true, 0.0});
  EXPECT_DOUBLE_EQ(weighted.events()[0].weight, 3.5);
  EXPECT_THROW(parse("a b 1\n", {true, 0.0}), ParseError);
  EXPECT_THROW(parse("a b 1 -2\n", {true, 0.0}), ParseError);
}

TEST(ParseEdgeList, DuplicateRecordsStayDistinct) {
  const auto net = parse("a b 1\na b 1\n");
  EXPECT_EQ(net.event_count(), 2u);
}

TEST(ParseEdgeList, GranularityBucketsTimestamps) {
  const auto net = parse("a b 100\nb c 130\nc d 250\nd a 299\n", {false, 100.0});
  EXPECT_EQ(net.last_epoch(), 2);
  EXPECT_EQ(net.epochs().distinct_raw_timestamps(), 4u);
  EXPECT_DOUBLE_EQ(net.epochs().raw(2), 250.0);
}

TEST(ParseEdgeList, RoundTripPreservesEvents) {
  const auto net = parse("x y 1.5\ny z 7\nz x 1.5\nx z 1e3\n");
  std::ostringstream out;
  write_edge_list(net, out);
  const auto again = parse(out.str(), {true, 0.0});
  EXPECT_EQ(again.events(), net.events());
  for (NodeId v = 0; v < net.node_count(); ++v) EXPECT_EQ(again.registry().raw(v), net.registry().raw(v));
}

TEST(TemporalNetwork, RejectsInvalidEvents) {
  EXPECT_THROW(TemporalNetwork::from_dense({{0, 0, 1, 1.0}}, 2), Error);
  EXPECT_THROW(TemporalNetwork::from_dense({{0, 5, 1, 1.0}}, 2), Error);
  EXPECT_THROW(TemporalNetwork::from_dense({{0, 1, 0, 1.0}}, 2), Error);
}

TEST(HistoryBuffer, EvictsOldest) {
  HistoryBuffer buf(0, 2);
  buf.push(1, 1);
  buf.push(2, 2);
  buf.push(3, 3);
  const auto snap = buf.snapshot();
  ASSERT_EQ(snap.size(), 2u);
  EXPECT_EQ(snap[0].neighbor, 2u);
  EXPECT_EQ(snap[1].neighbor, 3u);
  EXPECT_THROW(HistoryBuffer(0, 0), Error);
}

TEST(HistoryStream, FirstEventSeesEmptyHistory) {
  const auto stream = build_history_stream(synthetic::four_node_network(), 2);
  EXPECT_TRUE(stream[0].source_history.empty());
  EXPECT_TRUE(stream[0].target_history.empty());
}

TEST(HistoryStream, CapacityOneKeepsLatestNeighbor) {
  const auto net = TemporalNetwork::from_dense({{0, 1, 1, 1.0}, {0, 2, 2, 1.0}, {0, 3, 3, 1.0}}, 4);
  const auto stream = build_history_stream(net, 1);
  ASSERT_EQ(stream[2].source_history.size(), 1u);
  EXPECT_EQ(stream[2].source_history[0], (HistoryEntry{2, 2}));
}

TEST(HistoryStream, MatchesHandTrace) {
  // events: (0,1,1) (2,3,1) (0,2,2) (1,3,2) (0,3,3) (1,2,3) (0,1,3), h = 2
  const auto stream = build_history_stream(synthetic::four_node_network(), 2);
  ASSERT_EQ(stream.size(), 7u);
  using H = HistorySnapshot;
  EXPECT_EQ(stream[1].source_history, H{});
  EXPECT_EQ(stream[2].source_history, (H{{1, 1}}));
  EXPECT_EQ(stream[2].target_history, (H{{3, 1}}));
  EXPECT_EQ(stream[3].source_history, (H{{0, 1}}));
  EXPECT_EQ(stream[3].target_history, (H{{2, 1}}));
  EXPECT_EQ(stream[4].source_history, (H{{1, 1}, {2, 2}}));
  EXPECT_EQ(stream[4].target_history, (H{{2, 1}, {1, 2}}));
  EXPECT_EQ(stream[5].source_history, (H{{0, 1}, {3, 2}}));
  EXPECT_EQ(stream[5].target_history, (H{{3, 1}, {0, 2}}));
  // same epoch as events 4 and 5, so their inserts are not visible yet
  EXPECT_EQ(stream[6].source_history, (H{{1, 1}, {2, 2}}));
  EXPECT_EQ(stream[6].target_history, (H{{0, 1}, {3, 2}}));
}

TEST(HistoryStream, EntriesPrecedeEventAndRespectCapacity) {
  const auto cn = synthetic::community_network({});
  for (std::size_t h : {1u, 3u, 5u}) {
    const auto stream = build_history_stream(cn.net, h);
    for (const auto& s : stream) {
      EXPECT_LE(s.source_history.size(), h);
      EXPECT_LE(s.target_history.size(), h);
      for (const auto* hist : {&s.source_history, &s.target_history}) {
        for (std::size_t k = 0; k < hist->size(); ++k) {
          EXPECT_LT((*hist)[k].time, s.event.time);
          if (k > 0) {
            EXPECT_LE((*hist)[k - 1].time, (*hist)[k].time);
          }
        }
      }
    }
  }
}

TEST(HistoryStream, ReplayIsPure) {
  const auto net = synthetic::four_node_network();
  const auto a = build_history_stream(net, 2);
  const auto b = build_history_stream(net, 2);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].event, b[k].event);
    EXPECT_EQ(a[k].source_history, b[k].source_history);
    EXPECT_EQ(a[k].target_history, b[k].target_history);
  }
  EXPECT_THROW(build_history_stream(net, 0), Error);
}

TEST(MacroSeries, SingleEvent) {
  const auto s = compute_macro_series(TemporalNetwork::from_dense({{0, 1, 1, 1.0}}, 2));
  EXPECT_EQ(s.e, std::vector<double>{1});
  EXPECT_EQ(s.n, std::vector<double>{2});
  EXPECT_TRUE(s.delta_e.empty());
}

TEST(MacroSeries, RepeatedPairCountsEachEvent) {
  const auto s = compute_macro_series(TemporalNetwork::from_dense({{0, 1, 1, 1.0}, {0, 1, 2, 1.0}}, 2));
  EXPECT_EQ(s.e, (std::vector<double>{1, 2}));
  EXPECT_EQ(s.delta_e, std::vector<double>{1});
}

TEST(MacroSeries, MatchesHandCount) {
  const auto net = TemporalNetwork::from_dense({{0, 1, 1, 1.0},
                                                {1, 2, 1, 1.0},
                                                {0, 2, 2, 1.0},
                                                {3, 4, 3, 1.0},
                                                {3, 0, 3, 1.0},
                                                {4, 1, 3, 1.0},
                                                {5, 0, 4, 1.0},
                                                {5, 1, 4, 1.0},
                                                {2, 3, 4, 1.0},
                                                {0, 1, 4, 1.0}},
                                               6);
  const auto s = compute_macro_series(net);
  EXPECT_EQ(s.epochs, (std::vector<Epoch>{1, 2, 3, 4}));
  EXPECT_EQ(s.e, (std::vector<double>{2, 3, 6, 10}));
  EXPECT_EQ(s.n, (std::vector<double>{3, 3, 5, 6}));
  EXPECT_EQ(s.delta_e, (std::vector<double>{1, 3, 4}));
  EXPECT_EQ(s.index_of(3), std::optional<std::size_t>(2));
  EXPECT_EQ(s.index_of(5), std::nullopt);
}

TEST(MacroSeries, TotalsMatchNetwork) {
  const auto cn = synthetic::community_network({});
  const auto s = compute_macro_series(cn.net);
  EXPECT_EQ(s.e.back(), static_cast<double>(cn.net.event_count()));
  EXPECT_EQ(s.n.back(), static_cast<double>(cn.net.node_count()));
  for (std::size_t k = 0; k < s.delta_e.size(); ++k) {
    EXPECT_GE(s.delta_e[k], 0.0);
    EXPECT_LE(s.n[k], s.n[k + 1]);
  }
}

TEST(SplitByTime, PartitionsAtSplitEpoch) {
  const auto net = synthetic::four_node_network();
  const auto [train, test] = split_by_time(net, 2);
  EXPECT_EQ(train.event_count(), 2u);
  EXPECT_EQ(test.event_count(), 5u);
  EXPECT_EQ(train.node_count(), net.node_count());
  EXPECT_EQ(&train.registry(), &net.registry());

  const auto [all, none] = split_by_time(net, net.last_epoch() + 1);
  EXPECT_EQ(all.event_count(), net.event_count());
  EXPECT_TRUE(none.empty());

  EXPECT_THROW(split_by_time(net, 1), Error);
}

TEST(SplitByTime, HoldoutPicksTailEpoch) {
  const auto net = synthetic::four_node_network();
  // 7 events; keeping at most 5.6 leaves epochs 1-2 (4 events)
  EXPECT_EQ(holdout_split_epoch(net, 0.2), 3);
  EXPECT_THROW(holdout_split_epoch(net, 0.0), Error);
  EXPECT_THROW(holdout_split_epoch(net, 0.9), Error);
}

TEST(Labels, DenseClassesAndHistogram) {
  const auto net = parse("a b 1\nc d 1\ne a 2\n");
  std::istringstream in("a red\nb blue\nc green\nd red\ne violet\n");
  const auto labels = parse_labels(in, "labels", net.registry());
  EXPECT_EQ(labels.class_count(), 4u);
  EXPECT_EQ(labels.histogram(), (std::vector<std::size_t>{2, 1, 1, 1}));
  EXPECT_EQ(labels.class_names()[0], "red");
}

TEST(Labels, UnknownNodeIsNamed) {
  const auto net = parse("a b 1\n");
  std::istringstream in("a x\nghost y\n");
  try {
    parse_labels(in, "labels", net.registry());
    FAIL() << "expected an error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}
