#include "perfaug/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <iterator>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "perfaug/error.hpp"

namespace perfaug {

namespace {

struct CsvRow {
    std::vector<std::string> fields;
    long line = 0;  // 1-based physical line where the row starts
};

// RFC 4180 style: quoted fields may hold commas, doubled quotes, and newlines.
std::vector<CsvRow> split_csv(std::string_view text) {
    std::vector<CsvRow> rows;
    CsvRow row;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    long line = 1;
    row.line = 1;

    auto end_field = [&] {
        row.fields.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        bool blank = row.fields.size() == 1 && row.fields[0].empty();
        if (!blank) rows.push_back(std::move(row));
        row = CsvRow{};
    };

    for (std::size_t pos = 0; pos < text.size(); ++pos) {
        char c = text[pos];
        if (in_quotes) {
            if (c == '"') {
                if (pos + 1 < text.size() && text[pos + 1] == '"') {
                    field.push_back('"');
                    ++pos;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                if (field_started && !field.empty()) throw ParseError("stray quote inside unquoted field", line);
                in_quotes = true;
                field_started = true;
                break;
            case ',':
                end_field();
                break;
            case '\r':
                break;
            case '\n':
                end_row();
                ++line;
                row.line = line;
                break;
            default:
                field.push_back(c);
                field_started = true;
        }
    }
    if (in_quotes) throw ParseError("unterminated quoted field", row.line);
    if (field_started || !row.fields.empty()) end_row();
    return rows;
}

std::string upper(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char ch) { return std::toupper(ch); });
    return out;
}

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace

std::optional<Difficulty> parse_difficulty(std::string_view token) {
    std::string t = upper(trim(token));
    if (t == "EASY" || t == "E") return Difficulty::Easy;
    if (t == "MEDIUM" || t == "M") return Difficulty::Medium;
    if (t == "HARD" || t == "H") return Difficulty::Hard;
    return std::nullopt;
}

std::string_view to_string(Difficulty d) {
    switch (d) {
        case Difficulty::Easy: return "Easy";
        case Difficulty::Medium: return "Medium";
        case Difficulty::Hard: return "Hard";
    }
    return "";
}

std::vector<TransactionRecord> parse_transactions(std::istream& source, const CsvSchema& schema) {
    std::string text{std::istreambuf_iterator<char>(source), std::istreambuf_iterator<char>()};
    return parse_transactions_string(text, schema);
}

std::vector<TransactionRecord> parse_transactions_string(std::string_view csv, const CsvSchema& schema) {
    // Strip a UTF-8 byte order mark.
    if (csv.size() >= 3 && csv.substr(0, 3) == "\xEF\xBB\xBF") csv.remove_prefix(3);
    auto rows = split_csv(csv);
    if (rows.empty()) throw SchemaError("input has no header row");

    const auto& header = rows.front().fields;
    auto column = [&](const std::string& name) -> std::optional<std::size_t> {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (trim(header[c]) == name) return c;
        return std::nullopt;
    };
    auto required = [&](const std::string& name) {
        auto c = column(name);
        if (!c) throw SchemaError("missing required column \"" + name + "\"");
        return *c;
    };
    const std::size_t c_learner = required(schema.learner);
    const std::size_t c_question = required(schema.question);
    const std::size_t c_attempt = required(schema.attempt);
    const std::size_t c_outcome = required(schema.outcome);
    const auto c_lesson = column(schema.lesson);
    const auto c_difficulty = column(schema.difficulty);
    const auto c_timestamp = column(schema.timestamp);

    std::vector<TransactionRecord> records;
    records.reserve(rows.size() - 1);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& f = rows[r].fields;
        const long line = rows[r].line;
        if (f.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                                 std::to_string(f.size()) + " on line " + std::to_string(line),
                             line);

        TransactionRecord rec;
        rec.learner_id = trim(f[c_learner]);
        rec.question_id = trim(f[c_question]);
        if (rec.learner_id.empty() || rec.question_id.empty())
            throw ParseError("empty learner or question id on line " + std::to_string(line), line);

        std::string attempt = trim(f[c_attempt]);
        int value = 0;
        auto [ptr, ec] = std::from_chars(attempt.data(), attempt.data() + attempt.size(), value);
        if (ec != std::errc{} || ptr != attempt.data() + attempt.size() || value < 1)
            throw ParseError("invalid attempt \"" + attempt + "\" on line " + std::to_string(line), line);
        rec.attempt_index = value;

        std::string outcome = upper(trim(f[c_outcome]));
        if (outcome == "CORRECT") {
            rec.outcome = Outcome::Correct;
        } else if (outcome == "INCORRECT") {
            rec.outcome = Outcome::Incorrect;
        } else {
            throw ParseError("unknown outcome \"" + trim(f[c_outcome]) + "\" on line " + std::to_string(line), line);
        }

        if (c_lesson) rec.lesson_id = trim(f[*c_lesson]);
        if (c_difficulty && !trim(f[*c_difficulty]).empty()) {
            rec.difficulty = parse_difficulty(f[*c_difficulty]);
            if (!rec.difficulty)
                throw ParseError("unknown difficulty \"" + trim(f[*c_difficulty]) + "\" on line " +
                                     std::to_string(line),
                                 line);
        }
        if (c_timestamp && !trim(f[*c_timestamp]).empty()) rec.timestamp = trim(f[*c_timestamp]);
        records.push_back(std::move(rec));
    }
    return records;
}

void write_transactions(std::ostream& out, const std::vector<TransactionRecord>& records, const CsvSchema& schema) {
    out << schema.learner << ',' << schema.lesson << ',' << schema.difficulty << ',' << schema.question << ','
        << schema.attempt << ',' << schema.outcome << ',' << schema.timestamp << '\n';
    for (const auto& r : records) {
        out << csv_escape(r.learner_id) << ',' << csv_escape(r.lesson_id) << ','
            << (r.difficulty ? to_string(*r.difficulty) : std::string_view{}) << ',' << csv_escape(r.question_id)
            << ',' << r.attempt_index << ',' << (r.outcome == Outcome::Correct ? "CORRECT" : "INCORRECT") << ','
            << csv_escape(r.timestamp.value_or("")) << '\n';
    }
}

PerformanceTensor::PerformanceTensor(std::vector<std::string> learner_ids, std::vector<std::string> question_ids,
                                     std::size_t max_attempts)
    : learner_ids_(std::move(learner_ids)), question_ids_(std::move(question_ids)), max_attempts_(max_attempts) {
    if (learner_ids_.empty() || question_ids_.empty() || max_attempts_ == 0)
        throw DimensionError("tensor dimensions must all be at least 1");
    for (std::size_t u = 0; u < learner_ids_.size(); ++u)
        if (!learner_lookup_.emplace(learner_ids_[u], u).second)
            throw ValidationError("duplicate learner id \"" + learner_ids_[u] + "\"");
    for (std::size_t i = 0; i < question_ids_.size(); ++i)
        if (!question_lookup_.emplace(question_ids_[i], i).second)
            throw ValidationError("duplicate question id \"" + question_ids_[i] + "\"");
    cells_.assign(learner_ids_.size() * question_ids_.size() * max_attempts_, Cell::Missing);
}

std::optional<std::size_t> PerformanceTensor::learner_index(const std::string& id) const {
    auto it = learner_lookup_.find(id);
    if (it == learner_lookup_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::size_t> PerformanceTensor::question_index(const std::string& id) const {
    auto it = question_lookup_.find(id);
    if (it == question_lookup_.end()) return std::nullopt;
    return it->second;
}

std::size_t PerformanceTensor::flat(std::size_t u, std::size_t i, std::size_t j) const {
    if (u >= num_learners() || i >= num_questions() || j >= num_attempts())
        throw IndexError("tensor index (" + std::to_string(u) + "," + std::to_string(i) + "," + std::to_string(j) +
                         ") out of range");
    return (u * num_questions() + i) * num_attempts() + j;
}

Cell PerformanceTensor::at(std::size_t u, std::size_t i, std::size_t j) const { return cells_[flat(u, i, j)]; }

void PerformanceTensor::set(std::size_t u, std::size_t i, std::size_t j, Cell value) { cells_[flat(u, i, j)] = value; }

std::vector<ObservedCell> PerformanceTensor::observed() const {
    std::vector<ObservedCell> out;
    out.reserve(observed_count());
    const std::size_t N = num_questions(), M = num_attempts();
    for (std::size_t idx = 0; idx < cells_.size(); ++idx) {
        if (cells_[idx] == Cell::Missing) continue;
        out.push_back({idx / (N * M), (idx / M) % N, idx % M, cells_[idx] == Cell::One ? 1.0 : 0.0});
    }
    return out;
}

std::size_t PerformanceTensor::observed_count() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(cells_.begin(), cells_.end(), [](Cell c) { return c != Cell::Missing; }));
}

bool PerformanceTensor::operator==(const PerformanceTensor& other) const {
    return learner_ids_ == other.learner_ids_ && question_ids_ == other.question_ids_ &&
           max_attempts_ == other.max_attempts_ && cells_ == other.cells_;
}

PerformanceTensor build_tensor(const std::vector<TransactionRecord>& records, const TensorFilter& filter) {
    std::vector<const TransactionRecord*> kept;
    for (const auto& r : records) {
        if (filter.lesson_id && r.lesson_id != *filter.lesson_id) continue;
        if (filter.difficulty && r.difficulty != filter.difficulty) continue;
        if (filter.max_attempts && r.attempt_index > *filter.max_attempts) continue;
        kept.push_back(&r);
    }
    if (kept.empty()) throw ValidationError("no transactions for filter");

    std::vector<std::string> learners, questions;
    std::unordered_map<std::string, std::size_t> lseen, qseen;
    int max_attempt = 0;
    for (const auto* r : kept) {
        if (lseen.emplace(r->learner_id, learners.size()).second) learners.push_back(r->learner_id);
        if (qseen.emplace(r->question_id, questions.size()).second) questions.push_back(r->question_id);
        max_attempt = std::max(max_attempt, r->attempt_index);
    }
    if (filter.max_attempts) {
        if (*filter.max_attempts < 1) throw ParameterError("attempt cap must be at least 1");
        max_attempt = *filter.max_attempts;
    }

    PerformanceTensor tensor(std::move(learners), std::move(questions), static_cast<std::size_t>(max_attempt));
    for (const auto* r : kept) {
        tensor.set(lseen.at(r->learner_id), qseen.at(r->question_id), static_cast<std::size_t>(r->attempt_index - 1),
                   r->outcome == Outcome::Correct ? Cell::One : Cell::Zero);
    }
    return tensor;
}

double sparsity(const PerformanceTensor& tensor) {
    if (tensor.size() == 0) return 0.0;
    return static_cast<double>(tensor.size() - tensor.observed_count()) / static_cast<double>(tensor.size());
}

std::vector<TransactionRecord> to_transactions(const PerformanceTensor& tensor, const std::string& lesson_id,
                                               std::optional<Difficulty> difficulty) {
    std::vector<TransactionRecord> out;
    for (const auto& c : tensor.observed()) {
        TransactionRecord r;
        r.learner_id = tensor.learner_ids()[c.learner];
        r.lesson_id = lesson_id;
        r.difficulty = difficulty;
        r.question_id = tensor.question_ids()[c.question];
        r.attempt_index = static_cast<int>(c.attempt + 1);
        r.outcome = c.value > 0.5 ? Outcome::Correct : Outcome::Incorrect;
        out.push_back(std::move(r));
    }
    return out;
}

PerformanceTensor mask_cells(const PerformanceTensor& tensor, const std::vector<ObservedCell>& cells) {
    PerformanceTensor out = tensor;
    for (const auto& c : cells) out.set(c.learner, c.question, c.attempt, Cell::Missing);
    return out;
}

}  // namespace perfaug
