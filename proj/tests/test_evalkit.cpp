#include <cmath>

#include <doctest.h>

#include "chartmix/errors.hpp"
#include "chartmix/evalkit.hpp"
#include "chartmix/rng.hpp"
#include "qa_fixture.hpp"

using namespace chartmix;
using namespace chartmix::eval;

TEST_SUITE("evalkit") {

TEST_CASE("extract_number rules") {
  CHECK(extract_number("The value is 1,234.5%") == doctest::Approx(1234.5));
  CHECK_FALSE(extract_number("no numbers here").has_value());
  CHECK(extract_number("It is between 2003 and 2005") == doctest::Approx(2003.0));
  CHECK(extract_number("-52 degrees") == doctest::Approx(-52.0));
  CHECK(extract_number("about .5 of it") == doctest::Approx(0.5));
  CHECK(extract_number("grew 45% yoy") == doctest::Approx(45.0));
  CHECK(extract_number("12,34 pairs") == doctest::Approx(12.0));  // not a separator
  CHECK_FALSE(extract_number("").has_value());
  CHECK_FALSE(extract_number("+-.,%").has_value());
}

TEST_CASE("extract_number is total over byte strings") {
  Rng rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    std::string junk;
    const std::size_t len = rng.index(40);
    for (std::size_t i = 0; i < len; ++i)
      junk.push_back(static_cast<char>(rng.uniform_int(0, 255)));
    CHECK_NOTHROW(extract_number(junk));
    CHECK_NOTHROW(is_numeric_answer(junk));
    CHECK_NOTHROW(normalize_answer(junk));
  }
}

TEST_CASE("numeric answer detection") {
  CHECK(is_numeric_answer("100"));
  CHECK(is_numeric_answer(" 1,234.5% "));
  CHECK(is_numeric_answer("-0.7"));
  CHECK_FALSE(is_numeric_answer("(2003, 2005)"));
  CHECK_FALSE(is_numeric_answer("12 monkeys"));
  CHECK_FALSE(is_numeric_answer("apple"));
  CHECK_FALSE(is_numeric_answer(""));
}

TEST_CASE("normalization") {
  CHECK(normalize_answer("  Apple. ") == "apple");
  CHECK(normalize_answer("TWO   words\t here") == "two words here");
  CHECK(normalize_answer("done!?") == "done");
  CHECK(normalize_answer("") == "");
}

TEST_CASE("relaxed_match boundaries") {
  CHECK(relaxed_match("95", "100", 0.05));
  CHECK_FALSE(relaxed_match("94.9", "100", 0.05));
  CHECK(relaxed_match("Apple.", "apple", 0.05));
  CHECK_FALSE(relaxed_match("It is between 2003 and 2005", "(2003, 2005)", 0.05));
  CHECK_FALSE(relaxed_match("It is between 2003 and 2005", "(2003, 2005)", 0.20));
  // zero ground truth uses the absolute margin
  CHECK(relaxed_match("0.04", "0", 0.05));
  CHECK_FALSE(relaxed_match("0.06", "0", 0.05));
  // prediction without any number never matches a numeric ground truth
  CHECK_FALSE(relaxed_match("none", "5", 0.20));
}

TEST_CASE("pot programs with closed-form oracles") {
  CHECK(pot_eval(pot_parse("a=[1,2,3]\nanswer=sum(a)")) == 6.0);
  CHECK(pot_eval(pot_parse("x=30\ny=60\nanswer=x/y")) == 0.5);
  CHECK(pot_eval(pot_parse("xs=[2,4,6,8]\nanswer=mean(xs)")) == 5.0);
  CHECK(pot_eval(pot_parse("v=[3,9,4]\nanswer=max(v)-min(v)")) == 6.0);
  CHECK(pot_eval(pot_parse("v=[3,9,4]\nanswer=len(v)")) == 3.0);
  CHECK(pot_eval(pot_parse("answer=abs(2-5)")) == 3.0);
  CHECK(pot_eval(pot_parse("answer=round(2.6)")) == 3.0);
  CHECK(pot_eval(pot_parse("answer=(1+2)*4/2-5")) == 1.0);
  CHECK(pot_eval(pot_parse("answer=-3+max(1,5)")) == 2.0);
}

TEST_CASE("pot error paths") {
  CHECK_THROWS_AS(pot_eval(pot_parse("answer=1/0")), PotError);
  CHECK_THROWS_AS(pot_eval(pot_parse("answer=q+1")), PotError);
  CHECK_THROWS_AS(pot_eval(pot_parse("a=[1,2]\nanswer=a")), PotError);
  CHECK_THROWS_AS(pot_parse("answer=1\nx=2"), PotError);   // after answer
  CHECK_THROWS_AS(pot_parse("x=1\nx=2\nanswer=x"), PotError);  // reassignment
  CHECK_THROWS_AS(pot_parse("x=1"), PotError);             // no answer
  CHECK_THROWS_AS(pot_parse(""), PotError);
  CHECK_THROWS_AS(pot_eval(pot_parse("answer=sum()")), PotError);
  CHECK_THROWS_AS(pot_eval(pot_parse("answer=sum(2,[1,2])")), PotError);
}

TEST_CASE("try_pot distinguishes non-programs from failing programs") {
  CHECK_FALSE(try_pot("The answer is 42").is_program);
  const PotOutcome ok = try_pot("answer=6*7");
  CHECK(ok.is_program);
  CHECK(ok.value == 42.0);
  const PotOutcome bad = try_pot("answer=1/0");
  CHECK(bad.is_program);
  CHECK_FALSE(bad.value.has_value());
  CHECK_FALSE(bad.error.empty());
}

TEST_CASE("score_report identity and pot mode") {
  std::vector<QAItem> items = {{"1", "q", "42", "42"}, {"2", "q", "apple", "apple"}};
  const RelaxedReport report = score_report(items);
  for (double acc : report.accuracies) CHECK(acc == 1.0);

  std::vector<QAItem> pot_items = {
      {"1", "q", "6", "a=[1,2,3]\nanswer=sum(a)"},
      {"2", "q", "5", "answer=1/0"},           // errors, scored wrong, no abort
      {"3", "q", "7", "answer=undefined_var"}, // errors, scored wrong, no abort
      {"4", "q", "9", "9"},                    // plain text passthrough
  };
  const RelaxedReport pot_report = score_report(pot_items, {0.05}, true);
  CHECK(pot_report.items[0].verdict_per_margin[0]);
  CHECK_FALSE(pot_report.items[1].verdict_per_margin[0]);
  CHECK(pot_report.items[1].pot_error);
  CHECK_FALSE(pot_report.items[2].verdict_per_margin[0]);
  CHECK(pot_report.items[3].verdict_per_margin[0]);
  CHECK(pot_report.accuracies[0] == doctest::Approx(0.5));

  CHECK_THROWS_AS(score_report({}), UsageError);
}

TEST_CASE("hand-scored fixture reproduces exactly") {
  const auto items = fixture_qa_items();
  const RelaxedReport report = score_report(items, {0.05, 0.10, 0.20}, false);
  const auto& fixture = hand_scored_fixture();
  REQUIRE(report.items.size() == fixture.size());
  for (std::size_t i = 0; i < fixture.size(); ++i)
    for (std::size_t m = 0; m < 3; ++m)
      CHECK_MESSAGE(report.items[i].verdict_per_margin[m] == fixture[i].verdicts[m],
                    "item ", i, " margin index ", m);
}

TEST_CASE("margin monotonicity on randomized perturbations") {
  Rng rng(102);
  for (int set = 0; set < 20; ++set) {
    std::vector<QAItem> items;
    for (int i = 0; i < 25; ++i) {
      const double g = rng.uniform(-500.0, 500.0);
      const double delta = rng.uniform(-0.3, 0.3);
      items.push_back({"i" + std::to_string(i), "", format_value(g),
                       format_value(g * (1.0 + delta))});
    }
    const RelaxedReport report = score_report(items);
    CHECK(report.accuracies[0] <= report.accuracies[1]);
    CHECK(report.accuracies[1] <= report.accuracies[2]);
  }
}

}  // TEST_SUITE
