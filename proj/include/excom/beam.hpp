#pragma once

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#include "excom/common.hpp"

namespace excom {

/// Breadth-limited search keeping the beam_size highest cumulative
/// log-probability hypotheses per step. A hypothesis is finished when it emits
/// eos or reaches max_total_len tokens (bos included); finished hypotheses
/// compete by final cumulative log-probability with no length normalization.
///
/// StepFn: (const std::vector<State>& states, const std::vector<std::int64_t>&
/// last_tokens) -> std::pair<std::vector<State>, std::vector<std::vector<double>>>
/// giving the successor state and log-probability row per live hypothesis.
///
/// Returns the winning token sequence including bos (and eos when emitted).
template <typename State, typename StepFn>
std::vector<std::int64_t> beam_search(State init, std::int64_t bos, std::int64_t eos,
                                      std::int64_t max_total_len, std::int64_t beam_size,
                                      StepFn&& step) {
  if (beam_size < 1) throw DataError("beam_search: beam size must be >= 1");
  struct Hypothesis {
    std::vector<std::int64_t> tokens;
    double logprob = 0.0;
    State state;
  };
  std::vector<Hypothesis> live;
  live.push_back({{bos}, 0.0, std::move(init)});
  std::vector<Hypothesis> finished;

  while (!live.empty() &&
         static_cast<std::int64_t>(live.front().tokens.size()) < max_total_len) {
    std::vector<State> states;
    std::vector<std::int64_t> last;
    states.reserve(live.size());
    last.reserve(live.size());
    for (const auto& hyp : live) {
      states.push_back(hyp.state);
      last.push_back(hyp.tokens.back());
    }
    auto [next_states, logprobs] = step(states, last);

    struct Candidate {
      double logprob;
      std::size_t source;
      std::int64_t token;
    };
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < live.size(); ++i) {
      for (std::size_t v = 0; v < logprobs[i].size(); ++v) {
        candidates.push_back({live[i].logprob + logprobs[i][v], i,
                              static_cast<std::int64_t>(v)});
      }
    }
    auto better = [](const Candidate& a, const Candidate& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.source != b.source) return a.source < b.source;
      return a.token < b.token;
    };
    std::size_t keep = std::min<std::size_t>(candidates.size(),
                                             static_cast<std::size_t>(beam_size));
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), better);
    candidates.resize(keep);

    std::vector<Hypothesis> next_live;
    for (const auto& c : candidates) {
      Hypothesis hyp;
      hyp.tokens = live[c.source].tokens;
      hyp.tokens.push_back(c.token);
      hyp.logprob = c.logprob;
      hyp.state = next_states[c.source];
      if (c.token == eos ||
          static_cast<std::int64_t>(hyp.tokens.size()) >= max_total_len) {
        finished.push_back(std::move(hyp));
      } else {
        next_live.push_back(std::move(hyp));
      }
    }
    live = std::move(next_live);
  }
  for (auto& hyp : live) finished.push_back(std::move(hyp));

  if (finished.empty()) return {bos};
  const Hypothesis* best = &finished.front();
  for (const auto& hyp : finished) {
    if (hyp.logprob > best->logprob) best = &hyp;
  }
  return best->tokens;
}

}  // namespace excom
