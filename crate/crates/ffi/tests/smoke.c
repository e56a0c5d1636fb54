#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "infosel.h"

#define CHECK(expr)                                                          \
  do {                                                                       \
    InfoselStatus s_ = (expr);                                               \
    if (s_ != INFOSEL_STATUS_OK) {                                           \
      fprintf(stderr, "%s failed: %d %s\n", #expr, (int)s_,                  \
              infosel_last_error_message());                                 \
      return 1;                                                              \
    }                                                                        \
  } while (0)

int main(void) {
  uint64_t ids[6] = {5, 1, 3, 0, 4, 2};
  uint32_t labels[6] = {0, 0, 0, 1, 1, 1};
  float features[12] = {0, 0, 1, 0, 4, 0, 10, 10, 11, 10, 14, 10};
  InfoselTable *table = NULL;
  CHECK(infosel_table_new(6, 2, 2, ids, labels, features, NULL, &table));

  InfoselScores *scores = NULL;
  CHECK(infosel_score(table, NULL, INFOSEL_INDICATOR_METRIC, &scores));
  if (infosel_scores_len(scores) != 6) return 2;

  InfoselPlan *plan = NULL;
  CHECK(infosel_select(scores, 2, INFOSEL_SCHEME_BALANCED, INFOSEL_DIRECTION_BADSET, &plan));
  uint64_t picked[2];
  if (infosel_plan_ids(plan, picked, 2) != 2) return 3;

  InfoselScores *bad = NULL;
  if (infosel_score(table, NULL, INFOSEL_INDICATOR_PROBABILITY_ENTROPY, &bad) != INFOSEL_STATUS_VALIDATION)
    return 4;
  if (strcmp(infosel_last_error_code(), "MISSING_LOGITS") != 0) return 5;

  printf("%s %llu %llu\n", infosel_version(), (unsigned long long)picked[0], (unsigned long long)picked[1]);
  infosel_plan_free(plan);
  infosel_scores_free(scores);
  infosel_table_free(table);
  return 0;
}
