// Copyright 2026 the condret authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "condret/dataset.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

#include <fmt/format.h>

#include "condret/error.h"
#include "condret/file_io.h"
#include "condret/random.h"

namespace condret {
namespace {

constexpr int kMaxTopicRetries = 100;

enum StreamTag : std::uint64_t {
  kItemTopicsStream = 1,
  kAffinityStream = 2,
  kEventStream = 3,
  kSplitStream = 4,
};

std::vector<double> sample_dirichlet(std::int32_t dims, double concentration,
                                     Rng& rng) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> p(dims);
  for (int attempt = 0; attempt < kMaxTopicRetries; ++attempt) {
    double sum = 0.0;
    for (auto& v : p) {
      v = gamma(rng);
      sum += v;
    }
    if (sum > 0.0 && std::isfinite(sum)) {
      for (auto& v : p) v /= sum;
      return p;
    }
  }
  // Every gamma draw underflowed: the concentration is tiny enough that a
  // one-hot vector is the limiting distribution anyway.
  std::fill(p.begin(), p.end(), 0.0);
  p[uniform_index(rng, dims)] = 1.0;
  return p;
}

TopicId sample_categorical(const std::vector<double>& p, Rng& rng) {
  double u = uniform_unit(rng);
  for (std::size_t t = 0; t + 1 < p.size(); ++t) {
    if (u < p[t]) return static_cast<TopicId>(t);
    u -= p[t];
  }
  return static_cast<TopicId>(p.size() - 1);
}

// ---- text format helpers -------------------------------------------------

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
  fail(ErrorKind::kParse, fmt::format("line {}: {}", line_no, what));
}

template <typename T>
T parse_number(std::string_view field, std::size_t line_no) {
  T value{};
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || field.empty()) {
    parse_fail(line_no, fmt::format("malformed number '{}'", field));
  }
  return value;
}

template <typename T>
void append_number(std::string& out, T value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  out.append(buf, ptr);
}

template <typename T>
std::vector<T> parse_list(std::string_view field, std::size_t line_no) {
  std::vector<T> values;
  if (field.empty()) return values;
  for (auto part : split(field, ',')) values.push_back(parse_number<T>(part, line_no));
  return values;
}

}  // namespace

bool Item::contains(TopicId topic) const {
  return std::binary_search(topics.begin(), topics.end(), topic);
}

void validate(const GenConfig& c) {
  check(c.num_users > 0, ErrorKind::kInvalidConfig, "num_users must be positive");
  check(c.num_items > 0, ErrorKind::kInvalidConfig, "num_items must be positive");
  check(c.num_topics > 0, ErrorKind::kInvalidConfig, "num_topics must be positive");
  check(c.min_topics_per_item >= 0 &&
            c.min_topics_per_item <= c.max_topics_per_item &&
            c.max_topics_per_item <= c.num_topics,
        ErrorKind::kInvalidConfig,
        "topics_per_item_range must satisfy 0 <= min <= max <= num_topics");
  check(c.events_per_user >= 0, ErrorKind::kInvalidConfig,
        "events_per_user must be nonnegative");
  check(c.affinity_concentration > 0.0 && std::isfinite(c.affinity_concentration),
        ErrorKind::kInvalidConfig, "affinity_concentration must be positive");
  check(c.noise_rate >= 0.0 && c.noise_rate <= 1.0, ErrorKind::kInvalidConfig,
        "noise_rate must lie in [0, 1]");
  check(c.heldout_fraction >= 0.0 && c.heldout_fraction < 1.0,
        ErrorKind::kInvalidConfig, "heldout_fraction must lie in [0, 1)");
}

Dataset generate_synthetic(const GenConfig& config) {
  validate(config);
  Dataset d;
  d.topic_count = config.num_topics;

  Rng item_rng(derive_seed(config.seed, {kItemTopicsStream}));
  std::vector<TopicId> all_topics(config.num_topics);
  std::iota(all_topics.begin(), all_topics.end(), 0);
  d.items.resize(config.num_items);
  for (ItemId i = 0; i < config.num_items; ++i) {
    Item& item = d.items[i];
    item.id = i;
    item.feature_id = i;
    const auto span = static_cast<std::uint64_t>(config.max_topics_per_item -
                                                 config.min_topics_per_item + 1);
    const auto size = config.min_topics_per_item +
                      static_cast<std::int32_t>(uniform_index(item_rng, span));
    // Partial Fisher-Yates draws `size` distinct topics.
    for (std::int32_t k = 0; k < size; ++k) {
      const auto j = k + static_cast<std::int32_t>(
                             uniform_index(item_rng, config.num_topics - k));
      std::swap(all_topics[k], all_topics[j]);
    }
    item.topics.assign(all_topics.begin(), all_topics.begin() + size);
    std::sort(item.topics.begin(), item.topics.end());
  }

  Rng affinity_rng(derive_seed(config.seed, {kAffinityStream}));
  d.users.resize(config.num_users);
  for (UserId u = 0; u < config.num_users; ++u) {
    d.users[u].id = u;
    d.users[u].feature_id = u;
    d.users[u].affinity =
        sample_dirichlet(config.num_topics, config.affinity_concentration,
                         affinity_rng);
  }

  const auto by_topic = items_by_topic(d);
  Rng event_rng(derive_seed(config.seed, {kEventStream}));
  Rng split_rng(derive_seed(config.seed, {kSplitStream}));
  std::unordered_map<std::uint64_t, Split> pair_split;
  d.engagements.reserve(static_cast<std::size_t>(config.num_users) *
                        config.events_per_user);
  for (UserId u = 0; u < config.num_users; ++u) {
    for (std::int32_t e = 0; e < config.events_per_user; ++e) {
      TopicId topic = -1;
      for (int attempt = 0; attempt < kMaxTopicRetries; ++attempt) {
        const bool noisy = uniform_unit(event_rng) < config.noise_rate;
        const TopicId t =
            noisy ? static_cast<TopicId>(uniform_index(event_rng, config.num_topics))
                  : sample_categorical(d.users[u].affinity, event_rng);
        if (!by_topic[t].empty()) {
          topic = t;
          break;
        }
      }
      check(topic >= 0, ErrorKind::kInvalidConfig,
            fmt::format("user {}: no item carries any sampled topic after {} "
                        "retries",
                        u, kMaxTopicRetries));
      const auto& pool = by_topic[topic];
      const ItemId item = pool[uniform_index(event_rng, pool.size())];
      const auto key = (static_cast<std::uint64_t>(u) << 32) |
                       static_cast<std::uint32_t>(item);
      auto [it, inserted] = pair_split.try_emplace(key, Split::kTrain);
      if (inserted && uniform_unit(split_rng) < config.heldout_fraction) {
        it->second = Split::kHeldout;
      }
      d.engagements.push_back({u, item, it->second});
    }
  }
  return d;
}

void validate(const Dataset& d) {
  check(d.topic_count > 0, ErrorKind::kParse, "topic_count must be positive");
  for (std::size_t i = 0; i < d.users.size(); ++i) {
    const User& u = d.users[i];
    check(u.id == static_cast<UserId>(i), ErrorKind::kParse,
          fmt::format("user ids must be dense; expected {}, found {}", i, u.id));
    check(u.feature_id >= 0 && static_cast<std::size_t>(u.feature_id) < d.users.size(),
          ErrorKind::kReferentialIntegrity,
          fmt::format("user {} feature_id {} out of range", u.id, u.feature_id));
    if (!u.affinity.empty()) {
      check(u.affinity.size() == static_cast<std::size_t>(d.topic_count),
            ErrorKind::kParse,
            fmt::format("user {} affinity has {} entries, expected {}", u.id,
                        u.affinity.size(), d.topic_count));
      double sum = 0.0;
      for (double a : u.affinity) {
        check(a >= 0.0, ErrorKind::kParse,
              fmt::format("user {} has a negative affinity entry", u.id));
        sum += a;
      }
      check(std::abs(sum - 1.0) <= 1e-6, ErrorKind::kParse,
            fmt::format("user {} affinity sums to {}", u.id, sum));
    }
  }
  for (std::size_t i = 0; i < d.items.size(); ++i) {
    const Item& it = d.items[i];
    check(it.id == static_cast<ItemId>(i), ErrorKind::kParse,
          fmt::format("item ids must be dense; expected {}, found {}", i, it.id));
    check(it.feature_id >= 0 && static_cast<std::size_t>(it.feature_id) < d.items.size(),
          ErrorKind::kReferentialIntegrity,
          fmt::format("item {} feature_id {} out of range", it.id, it.feature_id));
    for (std::size_t k = 0; k < it.topics.size(); ++k) {
      check(it.topics[k] >= 0 && it.topics[k] < d.topic_count,
            ErrorKind::kReferentialIntegrity,
            fmt::format("item {} references unknown topic {}", it.id, it.topics[k]));
      check(k == 0 || it.topics[k - 1] < it.topics[k], ErrorKind::kParse,
            fmt::format("item {} topics must be strictly ascending", it.id));
    }
  }
  for (std::size_t e = 0; e < d.engagements.size(); ++e) {
    const auto& ev = d.engagements[e];
    check(ev.user_id >= 0 && static_cast<std::size_t>(ev.user_id) < d.users.size(),
          ErrorKind::kReferentialIntegrity,
          fmt::format("engagement {} references unknown user {}", e, ev.user_id));
    check(ev.item_id >= 0 && static_cast<std::size_t>(ev.item_id) < d.items.size(),
          ErrorKind::kReferentialIntegrity,
          fmt::format("engagement {} references unknown item {}", e, ev.item_id));
  }
}

std::string serialize_dataset(const Dataset& d) {
  std::string out;
  out += "#meta\ttopic_count=";
  append_number(out, d.topic_count);
  out += "\n#users\n";
  for (const auto& u : d.users) {
    append_number(out, u.id);
    out += '\t';
    append_number(out, u.feature_id);
    out += '\t';
    for (std::size_t t = 0; t < u.affinity.size(); ++t) {
      if (t) out += ',';
      append_number(out, u.affinity[t]);
    }
    out += '\n';
  }
  out += "#items\n";
  for (const auto& it : d.items) {
    append_number(out, it.id);
    out += '\t';
    append_number(out, it.feature_id);
    out += '\t';
    for (std::size_t t = 0; t < it.topics.size(); ++t) {
      if (t) out += ',';
      append_number(out, it.topics[t]);
    }
    out += '\n';
  }
  out += "#engagements\n";
  for (const auto& ev : d.engagements) {
    append_number(out, ev.user_id);
    out += '\t';
    append_number(out, ev.item_id);
    out += ev.split == Split::kTrain ? "\ttrain\n" : "\theldout\n";
  }
  return out;
}

Dataset parse_dataset(std::string_view text) {
  enum class Section { kNone, kUsers, kItems, kEngagements };
  Dataset d;
  Section section = Section::kNone;
  bool have_meta = false;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    if (line.front() == '#') {
      const auto fields = split(line, '\t');
      if (fields[0] == "#meta") {
        for (std::size_t f = 1; f < fields.size(); ++f) {
          const auto eq = fields[f].find('=');
          if (eq == std::string_view::npos) parse_fail(line_no, "meta field without '='");
          const auto key = fields[f].substr(0, eq);
          const auto value = fields[f].substr(eq + 1);
          if (key == "topic_count") {
            d.topic_count = parse_number<std::int32_t>(value, line_no);
            have_meta = true;
          } else {
            parse_fail(line_no, fmt::format("unknown meta key '{}'", key));
          }
        }
      } else if (fields[0] == "#users") {
        section = Section::kUsers;
      } else if (fields[0] == "#items") {
        section = Section::kItems;
      } else if (fields[0] == "#engagements") {
        section = Section::kEngagements;
      } else {
        parse_fail(line_no, fmt::format("unknown section '{}'", fields[0]));
      }
      continue;
    }

    const auto fields = split(line, '\t');
    switch (section) {
      case Section::kNone:
        parse_fail(line_no, "record before any section header");
      case Section::kUsers: {
        if (fields.size() != 3) parse_fail(line_no, "user line needs 3 fields");
        User u;
        u.id = parse_number<UserId>(fields[0], line_no);
        u.feature_id = parse_number<std::int32_t>(fields[1], line_no);
        u.affinity = parse_list<double>(fields[2], line_no);
        if (u.id != static_cast<UserId>(d.users.size())) {
          parse_fail(line_no, fmt::format("user id {} out of sequence", u.id));
        }
        d.users.push_back(std::move(u));
        break;
      }
      case Section::kItems: {
        if (fields.size() != 3) parse_fail(line_no, "item line needs 3 fields");
        Item it;
        it.id = parse_number<ItemId>(fields[0], line_no);
        it.feature_id = parse_number<std::int32_t>(fields[1], line_no);
        it.topics = parse_list<TopicId>(fields[2], line_no);
        if (it.id != static_cast<ItemId>(d.items.size())) {
          parse_fail(line_no, fmt::format("item id {} out of sequence", it.id));
        }
        d.items.push_back(std::move(it));
        break;
      }
      case Section::kEngagements: {
        if (fields.size() != 3) parse_fail(line_no, "engagement line needs 3 fields");
        EngagementEvent ev;
        ev.user_id = parse_number<UserId>(fields[0], line_no);
        ev.item_id = parse_number<ItemId>(fields[1], line_no);
        if (fields[2] == "train") {
          ev.split = Split::kTrain;
        } else if (fields[2] == "heldout") {
          ev.split = Split::kHeldout;
        } else {
          parse_fail(line_no, fmt::format("unknown split '{}'", fields[2]));
        }
        d.engagements.push_back(ev);
        break;
      }
    }
  }
  if (!have_meta) fail(ErrorKind::kParse, "missing #meta topic_count header");
  validate(d);
  return d;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  write_file_atomic(path, serialize_dataset(dataset));
}

Dataset load_dataset(const std::string& path) {
  return parse_dataset(read_file(path));
}

std::vector<std::int64_t> item_popularity(const Dataset& d) {
  std::vector<std::int64_t> counts(d.items.size(), 0);
  for (const auto& ev : d.engagements) {
    if (ev.split == Split::kTrain) ++counts[ev.item_id];
  }
  return counts;
}

std::size_t count_train_events(const Dataset& d) {
  return static_cast<std::size_t>(
      std::count_if(d.engagements.begin(), d.engagements.end(),
                    [](const auto& ev) { return ev.split == Split::kTrain; }));
}

std::vector<std::vector<ItemId>> items_by_topic(const Dataset& d) {
  std::vector<std::vector<ItemId>> out(d.topic_count);
  for (const auto& it : d.items) {
    for (TopicId t : it.topics) out[t].push_back(it.id);
  }
  return out;
}

std::vector<TrainPair> train_pairs(const Dataset& d) {
  std::vector<TrainPair> pairs;
  for (const auto& ev : d.engagements) {
    if (ev.split == Split::kTrain) {
      pairs.push_back({ev.user_id, ev.item_id, pairs.size()});
    }
  }
  return pairs;
}

std::vector<Batch> make_batches(const Dataset& dataset, std::size_t batch_size,
                                std::uint64_t seed) {
  return make_batches(train_pairs(dataset), batch_size, seed);
}

std::vector<Batch> make_batches(const std::vector<TrainPair>& pairs,
                                std::size_t batch_size, std::uint64_t seed) {
  check(batch_size >= 1, ErrorKind::kInvalidConfig, "batch_size must be >= 1");
  check(batch_size <= pairs.size(), ErrorKind::kInvalidConfig,
        fmt::format("batch_size {} exceeds the {} train events", batch_size,
                    pairs.size()));
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(order, rng);
  std::vector<Batch> batches(pairs.size() / batch_size);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    batches[b].reserve(batch_size);
    for (std::size_t k = 0; k < batch_size; ++k) {
      batches[b].push_back(pairs[order[b * batch_size + k]]);
    }
  }
  return batches;
}

}  // namespace condret
