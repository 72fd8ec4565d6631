#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace perisk::pem {

// Axis-aligned pixel box, corners ordered min < max.
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
  double conf = 1.0;
};

double iou(const Box& a, const Box& b);  // ArgumentError on degenerate boxes

struct BoxMatchProblem {
  std::vector<Box> gt;
  std::vector<Box> pred;
};

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (gt, pred)
  double total_cost = 0.0;
};

// Minimum-cost one-to-one assignment of all rows (requires rows <= cols).
MatchResult solve_assignment(const std::vector<std::vector<double>>& cost);

// Optimal pairing of size min(|gt|, |pred|) under cost 1 - IoU
// (disjoint boxes cost exactly 1). Pairs come back sorted by gt index.
MatchResult hungarian_match(const BoxMatchProblem& problem);

// JSON: {"gt": [[x1,y1,x2,y2], ...], "pred": [[x1,y1,x2,y2, conf?], ...]}
BoxMatchProblem parse_box_problem(const std::string& text);
std::string match_to_json(const MatchResult& result);

}  // namespace perisk::pem
