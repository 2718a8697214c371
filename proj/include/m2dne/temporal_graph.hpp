#pragma once

// Timestamped edge lists, per-node history buffers and the cumulative
// edge/node series derived from them.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "m2dne/common.hpp"

namespace m2dne {

struct TemporalEvent {
  NodeId source = 0;
  NodeId target = 0;
  Epoch time = 1;
  double weight = 1.0;

  bool operator==(const TemporalEvent&) const = default;
};

/// External id <-> dense id table. Dense ids follow first appearance.
class NodeRegistry {
 public:
  NodeId intern(const std::string& raw) {
    auto [it, inserted] = index_.try_emplace(raw, static_cast<NodeId>(raw_.size()));
    if (inserted) raw_.push_back(raw);
    return it->second;
  }
  std::optional<NodeId> find(const std::string& raw) const {
    auto it = index_.find(raw);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& raw(NodeId id) const { return raw_.at(id); }
  std::size_t size() const { return raw_.size(); }

 private:
  std::unordered_map<std::string, NodeId> index_;
  std::vector<std::string> raw_;
};

/// Raw timestamp <-> epoch table; epoch k (1-based) covers the k-th distinct
/// time bucket in ascending order.
class EpochMap {
 public:
  EpochMap() = default;
  EpochMap(std::vector<double> representatives, std::size_t distinct_raw, double granularity)
      : representatives_(std::move(representatives)),
        distinct_raw_(distinct_raw),
        granularity_(granularity) {}

  std::size_t epoch_count() const { return representatives_.size(); }
  std::size_t distinct_raw_timestamps() const { return distinct_raw_; }
  double granularity() const { return granularity_; }
  /// Smallest raw timestamp that fell into the epoch.
  double raw(Epoch epoch) const { return representatives_.at(static_cast<std::size_t>(epoch - 1)); }

 private:
  std::vector<double> representatives_;
  std::size_t distinct_raw_ = 0;
  double granularity_ = 0.0;
};

class TemporalNetwork {
 public:
  TemporalNetwork() = default;

  /// Takes ownership of events; sorts them stably by time and validates ids.
  TemporalNetwork(std::vector<TemporalEvent> events, std::shared_ptr<const NodeRegistry> registry,
                  std::shared_ptr<const EpochMap> epochs, std::size_t node_count)
      : events_(std::move(events)),
        registry_(std::move(registry)),
        epochs_(std::move(epochs)),
        node_count_(node_count) {
    std::stable_sort(events_.begin(), events_.end(),
                     [](const TemporalEvent& a, const TemporalEvent& b) { return a.time < b.time; });
    for (const auto& ev : events_) {
      if (ev.source >= node_count_ || ev.target >= node_count_) {
        throw Error("event references node id outside the registry");
      }
      if (ev.source == ev.target) throw Error("self-loop event");
      if (ev.time < 1) throw Error("event epoch must be >= 1");
    }
  }

  /// Builds a network over dense ids 0..node_count-1 with synthetic raw ids
  /// ("0", "1", ...) and raw timestamps equal to the epochs.
  static TemporalNetwork from_dense(std::vector<TemporalEvent> events, std::size_t node_count) {
    auto registry = std::make_shared<NodeRegistry>();
    for (std::size_t i = 0; i < node_count; ++i) registry->intern(std::to_string(i));
    Epoch last = 0;
    for (const auto& ev : events) last = std::max(last, ev.time);
    std::vector<double> reps;
    for (Epoch t = 1; t <= last; ++t) reps.push_back(static_cast<double>(t));
    auto epochs = std::make_shared<EpochMap>(reps, reps.size(), 0.0);
    return TemporalNetwork(std::move(events), std::move(registry), std::move(epochs), node_count);
  }

  const std::vector<TemporalEvent>& events() const { return events_; }
  std::size_t node_count() const { return node_count_; }
  std::size_t event_count() const { return events_.size(); }
  bool empty() const { return events_.empty(); }
  Epoch first_epoch() const { return events_.empty() ? 0 : events_.front().time; }
  Epoch last_epoch() const { return events_.empty() ? 0 : events_.back().time; }
  const NodeRegistry& registry() const { return *registry_; }
  const EpochMap& epochs() const { return *epochs_; }
  std::shared_ptr<const NodeRegistry> shared_registry() const { return registry_; }
  std::shared_ptr<const EpochMap> shared_epochs() const { return epochs_; }

  std::size_t self_loops_dropped = 0;

 private:
  std::vector<TemporalEvent> events_;
  std::shared_ptr<const NodeRegistry> registry_;
  std::shared_ptr<const EpochMap> epochs_;
  std::size_t node_count_ = 0;
};

struct ParseOptions {
  bool weighted = false;
  // Raw timestamps are bucketed by floor(ts / granularity) before epoch
  // compression; 0 keeps every distinct timestamp.
  double time_granularity = 0.0;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline std::optional<double> parse_number(const std::string& tok) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && tok.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string strip_comment(const std::string& line) {
  const auto pos = line.find('#');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

}  // namespace detail

inline TemporalNetwork parse_edge_list(std::istream& in, const std::string& name,
                                       const ParseOptions& options = {}) {
  struct RawEvent {
    NodeId source, target;
    double ts;
    double weight;
  };
  auto registry = std::make_shared<NodeRegistry>();
  std::vector<RawEvent> raw;
  std::size_t self_loops = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tokens = detail::split_ws(detail::strip_comment(line));
    if (tokens.empty()) continue;
    if (tokens.size() < 3 || tokens.size() > 4) {
      throw ParseError(name, lineno, "expected 'src dst timestamp [weight]'");
    }
    if (options.weighted && tokens.size() != 4) {
      throw ParseError(name, lineno, "weighted input requires a weight column");
    }
    const auto ts = detail::parse_number(tokens[2]);
    if (!ts) throw ParseError(name, lineno, "bad timestamp '" + tokens[2] + "'");
    double weight = 1.0;
    if (tokens.size() == 4) {
      const auto w = detail::parse_number(tokens[3]);
      if (!w || *w < 0) throw ParseError(name, lineno, "bad weight '" + tokens[3] + "'");
      if (options.weighted) weight = *w;
    }
    if (tokens[0] == tokens[1]) {
      ++self_loops;
      continue;
    }
    const NodeId s = registry->intern(tokens[0]);
    const NodeId t = registry->intern(tokens[1]);
    raw.push_back({s, t, *ts, weight});
  }
  if (raw.empty()) throw Error(name + ": no events in edge list");
  if (self_loops > 0) {
    std::cerr << "warning: " << name << ": dropped " << self_loops << " self-loop line(s)\n";
  }

  auto bucket = [&](double ts) {
    return options.time_granularity > 0 ? std::floor(ts / options.time_granularity) : ts;
  };
  // bucket -> smallest raw timestamp inside it
  std::map<double, double> buckets;
  std::vector<double> distinct;
  for (const auto& r : raw) {
    distinct.push_back(r.ts);
    auto [it, inserted] = buckets.try_emplace(bucket(r.ts), r.ts);
    if (!inserted) it->second = std::min(it->second, r.ts);
  }
  std::sort(distinct.begin(), distinct.end());
  const auto distinct_count =
      static_cast<std::size_t>(std::unique(distinct.begin(), distinct.end()) - distinct.begin());
  std::map<double, Epoch> epoch_of;
  std::vector<double> reps;
  for (const auto& [b, rep] : buckets) {
    epoch_of.emplace(b, static_cast<Epoch>(reps.size() + 1));
    reps.push_back(rep);
  }
  std::vector<TemporalEvent> events;
  events.reserve(raw.size());
  for (const auto& r : raw) {
    events.push_back({r.source, r.target, epoch_of.at(bucket(r.ts)), r.weight});
  }
  const std::size_t nodes = registry->size();
  auto epochs = std::make_shared<EpochMap>(std::move(reps), distinct_count, options.time_granularity);
  TemporalNetwork net(std::move(events), std::move(registry), std::move(epochs), nodes);
  net.self_loops_dropped = self_loops;
  return net;
}

inline TemporalNetwork parse_edge_list(const std::string& path, const ParseOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open edge list '" + path + "'");
  return parse_edge_list(in, path, options);
}

inline TemporalNetwork parse_edge_list(const std::string& path, bool weighted) {
  return parse_edge_list(path, ParseOptions{weighted, 0.0});
}

/// Writes `src dst timestamp weight` lines using raw ids and epoch
/// representative timestamps; parsing the output reproduces the events.
inline void write_edge_list(const TemporalNetwork& net, std::ostream& out) {
  for (const auto& ev : net.events()) {
    out << net.registry().raw(ev.source) << '\t' << net.registry().raw(ev.target) << '\t'
        << detail::format_number(net.epochs().raw(ev.time)) << '\t'
        << detail::format_number(ev.weight) << '\n';
  }
}

// ---------------------------------------------------------------------------
// History buffers

struct HistoryEntry {
  NodeId neighbor = 0;
  Epoch time = 0;
  bool operator==(const HistoryEntry&) const = default;
};

using HistorySnapshot = std::vector<HistoryEntry>;

/// Most recent `capacity` neighbors of one node, oldest first.
class HistoryBuffer {
 public:
  HistoryBuffer(NodeId owner, std::size_t capacity) : owner_(owner), capacity_(capacity) {
    if (capacity == 0) throw Error("history capacity must be >= 1");
  }

  void push(NodeId neighbor, Epoch time) {
    if (entries_.size() == capacity_) entries_.pop_front();
    entries_.push_back({neighbor, time});
  }

  NodeId owner() const { return owner_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  HistorySnapshot snapshot() const { return {entries_.begin(), entries_.end()}; }

 private:
  NodeId owner_;
  std::size_t capacity_;
  std::deque<HistoryEntry> entries_;
};

struct EventSnapshot {
  TemporalEvent event;
  HistorySnapshot source_history;
  HistorySnapshot target_history;
};

/// Pairs every event with both endpoints' history as it stood before the
/// event's epoch. Events sharing an epoch never see each other: inserts are
/// committed once the epoch is complete.
inline std::vector<EventSnapshot> build_history_stream(const TemporalNetwork& net, std::size_t h) {
  if (h == 0) throw Error("history length must be >= 1");
  std::vector<HistoryBuffer> buffers;
  buffers.reserve(net.node_count());
  for (std::size_t i = 0; i < net.node_count(); ++i) buffers.emplace_back(static_cast<NodeId>(i), h);

  std::vector<EventSnapshot> out;
  out.reserve(net.event_count());
  const auto& events = net.events();
  std::size_t begin = 0;
  while (begin < events.size()) {
    std::size_t end = begin;
    while (end < events.size() && events[end].time == events[begin].time) ++end;
    for (std::size_t k = begin; k < end; ++k) {
      const auto& ev = events[k];
      out.push_back({ev, buffers[ev.source].snapshot(), buffers[ev.target].snapshot()});
    }
    for (std::size_t k = begin; k < end; ++k) {
      const auto& ev = events[k];
      buffers[ev.source].push(ev.target, ev.time);
      buffers[ev.target].push(ev.source, ev.time);
    }
    begin = end;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Macro series

/// Per-epoch cumulative node and temporal-edge counts. delta_e[k] pairs with
/// epochs[k] and holds e[k+1] - e[k], so it is one shorter than the rest.
/// Counts are stored as doubles so synthetic series may be fractional.
struct MacroSeries {
  std::vector<Epoch> epochs;
  std::vector<double> n;
  std::vector<double> e;
  std::vector<double> delta_e;

  std::size_t size() const { return epochs.size(); }
  bool empty() const { return epochs.empty(); }

  static MacroSeries from_counts(Epoch first_epoch, std::vector<double> n, std::vector<double> e) {
    if (n.size() != e.size()) throw Error("macro series length mismatch");
    MacroSeries s;
    for (std::size_t k = 0; k < n.size(); ++k) s.epochs.push_back(first_epoch + static_cast<Epoch>(k));
    s.n = std::move(n);
    s.e = std::move(e);
    for (std::size_t k = 0; k + 1 < s.e.size(); ++k) s.delta_e.push_back(s.e[k + 1] - s.e[k]);
    return s;
  }

  /// First `count` epochs.
  MacroSeries prefix(std::size_t count) const {
    count = std::min(count, size());
    return from_counts(epochs.empty() ? 1 : epochs.front(),
                       {n.begin(), n.begin() + static_cast<std::ptrdiff_t>(count)},
                       {e.begin(), e.begin() + static_cast<std::ptrdiff_t>(count)});
  }

  /// Index of an epoch, if covered.
  std::optional<std::size_t> index_of(Epoch t) const {
    if (epochs.empty() || t < epochs.front() || t > epochs.back()) return std::nullopt;
    return static_cast<std::size_t>(t - epochs.front());
  }
};

inline MacroSeries compute_macro_series(const TemporalNetwork& net) {
  if (net.empty()) throw Error("macro series of an empty network");
  const Epoch first = net.first_epoch();
  const Epoch last = net.last_epoch();
  std::vector<double> n, e;
  std::vector<char> seen(net.node_count(), 0);
  double nodes = 0, edges = 0;
  std::size_t k = 0;
  const auto& events = net.events();
  for (Epoch t = first; t <= last; ++t) {
    for (; k < events.size() && events[k].time == t; ++k) {
      edges += 1;
      for (NodeId v : {events[k].source, events[k].target}) {
        if (!seen[v]) {
          seen[v] = 1;
          nodes += 1;
        }
      }
    }
    n.push_back(nodes);
    e.push_back(edges);
  }
  return MacroSeries::from_counts(first, std::move(n), std::move(e));
}

// ---------------------------------------------------------------------------
// Splits

/// Events before t_split go to train, the rest to test. Both halves keep the
/// parent's id and epoch tables.
inline std::pair<TemporalNetwork, TemporalNetwork> split_by_time(const TemporalNetwork& net,
                                                                 Epoch t_split) {
  if (t_split <= 1) throw Error("split epoch must be > 1 so the training window is non-empty");
  std::vector<TemporalEvent> train, test;
  for (const auto& ev : net.events()) (ev.time < t_split ? train : test).push_back(ev);
  if (train.empty()) throw Error("split produces an empty training window");
  return {TemporalNetwork(std::move(train), net.shared_registry(), net.shared_epochs(), net.node_count()),
          TemporalNetwork(std::move(test), net.shared_registry(), net.shared_epochs(), net.node_count())};
}

/// Latest split epoch whose training window holds at most (1 - holdout) of
/// the events, so roughly the last `holdout` fraction is held out.
inline Epoch holdout_split_epoch(const TemporalNetwork& net, double holdout) {
  if (!(holdout > 0 && holdout < 1)) throw Error("holdout fraction must lie in (0, 1)");
  const auto series = compute_macro_series(net);
  const double keep = (1.0 - holdout) * static_cast<double>(net.event_count());
  Epoch split = series.epochs.front();
  for (std::size_t k = 0; k < series.size(); ++k) {
    if (series.e[k] <= keep) split = series.epochs[k] + 1;
  }
  if (split <= series.epochs.front()) throw Error("holdout fraction leaves the training window empty");
  return split;
}

// ---------------------------------------------------------------------------
// Labels

class LabelTable {
 public:
  void assign(NodeId node, std::size_t cls) { labels_[node] = cls; }
  std::size_t class_count() const { return class_names_.size(); }
  const std::map<NodeId, std::size_t>& labels() const { return labels_; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  std::size_t intern_class(const std::string& name) {
    auto it = std::find(class_names_.begin(), class_names_.end(), name);
    if (it != class_names_.end()) return static_cast<std::size_t>(it - class_names_.begin());
    class_names_.push_back(name);
    return class_names_.size() - 1;
  }

  std::vector<std::size_t> histogram() const {
    std::vector<std::size_t> h(class_count(), 0);
    for (const auto& [node, cls] : labels_) ++h[cls];
    return h;
  }

 private:
  std::map<NodeId, std::size_t> labels_;
  std::vector<std::string> class_names_;
};

/// Reads `node label` lines. Classes are numbered by first appearance.
inline LabelTable parse_labels(std::istream& in, const std::string& name, const NodeRegistry& registry) {
  LabelTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tokens = detail::split_ws(detail::strip_comment(line));
    if (tokens.empty()) continue;
    if (tokens.size() != 2) throw ParseError(name, lineno, "expected 'node label'");
    const auto id = registry.find(tokens[0]);
    if (!id) throw ParseError(name, lineno, "unknown node '" + tokens[0] + "'");
    table.assign(*id, table.intern_class(tokens[1]));
  }
  return table;
}

inline LabelTable parse_labels(const std::string& path, const NodeRegistry& registry) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open label file '" + path + "'");
  return parse_labels(in, path, registry);
}

}  // namespace m2dne
