#include <stdexcept>

#include "codesearch/ranking.hpp"
#include "doctest.h"

using namespace codesearch;

TEST_CASE("sort_ranked orders by score, then ascending id") {
  std::vector<ScoredDoc> entries{{3, 0.5}, {1, 0.9}, {2, 0.5}, {4, 0.1}};
  sort_ranked(entries);
  CHECK(entries[0].doc_id == 1);
  CHECK(entries[1].doc_id == 2);  // tie with 3, lower id wins
  CHECK(entries[2].doc_id == 3);
  CHECK(entries[3].doc_id == 4);
}

TEST_CASE("rank_of is 1-based and misses are nullopt") {
  RankedResults r;
  r.entries = {{10, 3.0}, {20, 2.0}, {30, 1.0}};
  CHECK(r.rank_of(10) == 1);
  CHECK(r.rank_of(30) == 3);
  CHECK_FALSE(r.rank_of(99).has_value());
  CHECK(RankedResults{}.empty());
}

TEST_CASE("check_ranked rejects out-of-order lists") {
  RankedResults good;
  good.entries = {{2, 1.0}, {1, 0.5}, {3, 0.5}};
  CHECK_NOTHROW(check_ranked(good));

  RankedResults rising;
  rising.entries = {{1, 0.5}, {2, 1.0}};
  CHECK_THROWS_AS(check_ranked(rising), std::logic_error);

  RankedResults tie_misordered;
  tie_misordered.entries = {{3, 0.5}, {1, 0.5}};
  CHECK_THROWS_AS(check_ranked(tie_misordered), std::logic_error);
}
