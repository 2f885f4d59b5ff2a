#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace chartmix::eval {

struct QAItem {
  std::string id;
  std::string question;
  std::string ground_truth;
  std::string prediction;
};

struct ItemVerdict {
  std::string id;
  std::vector<bool> verdict_per_margin;  // parallel to RelaxedReport::margins
  bool pot_used = false;
  bool pot_error = false;
};

struct RelaxedReport {
  std::vector<double> margins;      // ascending
  std::vector<double> accuracies;   // parallel to margins
  std::vector<ItemVerdict> items;
  std::size_t count = 0;
};

// First signed decimal in the text. Thousands separators are tolerated and a
// trailing percent sign is stripped without rescaling. nullopt when the text
// carries no digits. Never throws.
std::optional<double> extract_number(std::string_view text);

// True when the whole (trimmed) string is one number, allowing separators and
// a trailing percent sign.
bool is_numeric_answer(std::string_view text);

// Lowercase, trim, collapse internal whitespace, strip terminal punctuation.
std::string normalize_answer(std::string_view text);

// Numeric ground truths use |p - g| <= margin*|g| (|p| <= margin when g = 0);
// everything else falls back to normalized string equality.
bool relaxed_match(const std::string& pred, const std::string& gt, double margin);

// ---------------------------------------------------------------------------
// Program-of-thought mini interpreter: straight-line assignments over numbers
// and numeric lists, ending in `answer = <expr>`. No loops, so evaluation
// always terminates.
// ---------------------------------------------------------------------------

class PotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PotStatement;

struct PotProgram {
  std::vector<PotStatement> statements;
  PotProgram();
  PotProgram(PotProgram&&) noexcept;
  PotProgram& operator=(PotProgram&&) noexcept;
  ~PotProgram();
};

PotProgram pot_parse(const std::string& text);  // throws PotError
double pot_eval(const PotProgram& program);     // throws PotError

// Parse-then-eval; distinguishes "not a program" (nullopt result, no error)
// from "program with a runtime error" (error string set).
struct PotOutcome {
  bool is_program = false;
  std::optional<double> value;
  std::string error;
};
PotOutcome try_pot(const std::string& text);

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

RelaxedReport score_report(const std::vector<QAItem>& items,
                           std::vector<double> margins = {0.05, 0.10, 0.20},
                           bool pot_mode = false);

std::vector<QAItem> read_prediction_file(const std::string& path);  // JSON lines
std::string report_to_json_text(const RelaxedReport& report);

std::string format_value(double v);  // used when a PoT value replaces a prediction

}  // namespace chartmix::eval
