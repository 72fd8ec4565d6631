#include "perisk/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>

#include "perisk/errors.hpp"

namespace perisk::pem {

namespace {

void check_box(const Box& b) {
  if (!(b.x1 < b.x2) || !(b.y1 < b.y2)) {
    throw ArgumentError("box corners must satisfy x1 < x2 and y1 < y2");
  }
}

}  // namespace

double iou(const Box& a, const Box& b) {
  check_box(a);
  check_box(b);
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  const double area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
  const double area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
  return inter / (area_a + area_b - inter);
}

// Jonker-Volgenant shortest augmenting path on a rectangular matrix.
MatchResult solve_assignment(const std::vector<std::vector<double>>& cost) {
  MatchResult result;
  const std::size_t n = cost.size();
  if (n == 0) return result;
  const std::size_t m = cost[0].size();
  for (const auto& row : cost) {
    if (row.size() != m) throw ArgumentError("cost matrix is ragged");
  }
  if (m == 0) return result;
  if (n > m) throw ArgumentError("assignment needs rows <= columns");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> match(m + 1, 0), way(m + 1, 0);  // 1-based rows
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  result.pairs.reserve(n);
  for (std::size_t j = 1; j <= m; ++j) {
    if (match[j] != 0) {
      result.pairs.emplace_back(match[j] - 1, j - 1);
      result.total_cost += cost[match[j] - 1][j - 1];
    }
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  return result;
}

MatchResult hungarian_match(const BoxMatchProblem& problem) {
  const std::size_t ng = problem.gt.size();
  const std::size_t np = problem.pred.size();
  if (ng == 0 || np == 0) return {};
  const bool transpose = ng > np;
  const std::size_t rows = transpose ? np : ng;
  const std::size_t cols = transpose ? ng : np;
  std::vector<std::vector<double>> cost(rows, std::vector<double>(cols));
  for (std::size_t g = 0; g < ng; ++g) {
    for (std::size_t p = 0; p < np; ++p) {
      const double c = 1.0 - iou(problem.gt[g], problem.pred[p]);
      if (transpose) {
        cost[p][g] = c;
      } else {
        cost[g][p] = c;
      }
    }
  }
  MatchResult result = solve_assignment(cost);
  if (transpose) {
    for (auto& pr : result.pairs) std::swap(pr.first, pr.second);
    std::sort(result.pairs.begin(), result.pairs.end());
  }
  return result;
}

BoxMatchProblem parse_box_problem(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed box problem JSON: ") + e.what());
  }
  auto read_side = [&](const char* key, bool with_conf) {
    std::vector<Box> boxes;
    for (const auto& arr : j.at(key)) {
      const auto vals = arr.get<std::vector<double>>();
      if (vals.size() != 4 && !(with_conf && vals.size() == 5)) {
        throw SchemaError(std::string(key) + " boxes need 4 corners" +
                          (with_conf ? " (+ optional confidence)" : ""));
      }
      Box b{vals[0], vals[1], vals[2], vals[3], vals.size() == 5 ? vals[4] : 1.0};
      check_box(b);
      boxes.push_back(b);
    }
    return boxes;
  };
  try {
    return {read_side("gt", false), read_side("pred", true)};
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("box problem missing fields: ") + e.what());
  }
}

std::string match_to_json(const MatchResult& result) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [g, p] : result.pairs) {
    pairs.push_back({g, p});
  }
  nlohmann::json j;
  j["pairs"] = pairs;
  j["total_cost"] = result.total_cost;
  return j.dump(2);
}

}  // namespace perisk::pem
