#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace perfaug {

enum class Outcome { Correct, Incorrect };
enum class Difficulty { Easy, Medium, Hard };

/// One graded response from the tutoring log.
struct TransactionRecord {
    std::string learner_id;
    std::string lesson_id;
    std::optional<Difficulty> difficulty;
    std::string question_id;
    int attempt_index = 1;  // 1-based
    Outcome outcome = Outcome::Incorrect;
    std::optional<std::string> timestamp;

    bool operator==(const TransactionRecord&) const = default;
};

/// Column names in the input CSV. The first four are required; the rest are
/// read when the header carries them.
struct CsvSchema {
    std::string learner = "Anon.Student.Id";
    std::string question = "Question.Id";
    std::string attempt = "Attempt";
    std::string outcome = "Outcome";
    std::string lesson = "Lesson.Id";
    std::string difficulty = "Difficulty";
    std::string timestamp = "Timestamp";
};

std::optional<Difficulty> parse_difficulty(std::string_view token);
std::string_view to_string(Difficulty d);

std::vector<TransactionRecord> parse_transactions(std::istream& source, const CsvSchema& schema = {});
std::vector<TransactionRecord> parse_transactions_string(std::string_view csv, const CsvSchema& schema = {});

void write_transactions(std::ostream& out, const std::vector<TransactionRecord>& records,
                        const CsvSchema& schema = {});

enum class Cell : std::int8_t { Missing = -1, Zero = 0, One = 1 };

/// An observed (non-missing) tensor cell with 0-based indices.
struct ObservedCell {
    std::size_t learner = 0;
    std::size_t question = 0;
    std::size_t attempt = 0;
    double value = 0.0;
};

/// Sparse learner x question x attempt tensor of binary outcomes.
///
/// Storage is dense (the tensors in this domain are at most a few hundred
/// thousand cells) with flat index (u * N + i) * M + j.
class PerformanceTensor {
public:
    PerformanceTensor() = default;
    PerformanceTensor(std::vector<std::string> learner_ids, std::vector<std::string> question_ids,
                      std::size_t max_attempts);

    std::size_t num_learners() const noexcept { return learner_ids_.size(); }
    std::size_t num_questions() const noexcept { return question_ids_.size(); }
    std::size_t num_attempts() const noexcept { return max_attempts_; }
    std::size_t size() const noexcept { return cells_.size(); }

    const std::vector<std::string>& learner_ids() const noexcept { return learner_ids_; }
    const std::vector<std::string>& question_ids() const noexcept { return question_ids_; }
    std::optional<std::size_t> learner_index(const std::string& id) const;
    std::optional<std::size_t> question_index(const std::string& id) const;

    Cell at(std::size_t u, std::size_t i, std::size_t j) const;
    void set(std::size_t u, std::size_t i, std::size_t j, Cell value);

    /// Observed cells in flat-index order.
    std::vector<ObservedCell> observed() const;
    std::size_t observed_count() const noexcept;

    const std::vector<Cell>& cells() const noexcept { return cells_; }

    bool operator==(const PerformanceTensor& other) const;

private:
    std::size_t flat(std::size_t u, std::size_t i, std::size_t j) const;

    std::vector<std::string> learner_ids_;
    std::vector<std::string> question_ids_;
    std::size_t max_attempts_ = 0;
    std::vector<Cell> cells_;
    std::unordered_map<std::string, std::size_t> learner_lookup_;
    std::unordered_map<std::string, std::size_t> question_lookup_;
};

struct TensorFilter {
    std::optional<std::string> lesson_id;
    std::optional<Difficulty> difficulty;
    /// Fixed attempt cap; records beyond it are dropped. Defaults to the
    /// largest attempt index present after filtering.
    std::optional<int> max_attempts;
};

/// Learners and questions are indexed by first appearance; duplicate
/// (learner, question, attempt) keys keep the last record.
PerformanceTensor build_tensor(const std::vector<TransactionRecord>& records, const TensorFilter& filter = {});

/// Fraction of missing cells.
double sparsity(const PerformanceTensor& tensor);

/// Inverse of build_tensor: one record per observed cell.
std::vector<TransactionRecord> to_transactions(const PerformanceTensor& tensor, const std::string& lesson_id,
                                               std::optional<Difficulty> difficulty);

/// Copy with the listed cells set to Missing.
PerformanceTensor mask_cells(const PerformanceTensor& tensor, const std::vector<ObservedCell>& cells);

}  // namespace perfaug
