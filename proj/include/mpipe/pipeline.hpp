#pragma once

#include "mpipe/text.hpp"

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace mpipe::pipeline {

enum class StageMode { Single, Scatter };

std::string_view to_string(StageMode m);

/// Stage input naming the initial dataset rather than an earlier stage.
inline constexpr std::string_view kDatasetInput = "dataset";

/// Placeholders a template may use.
inline constexpr std::string_view kPlaceholders[] = {"input", "output", "part", "workdir"};

struct StageSpec {
    std::string id;
    StageMode mode = StageMode::Single;
    std::string command_template;
    std::vector<std::string> expected_outputs;
    std::string log_glob = "{workdir}/*.log";
    int cores = 1;
    double base_time_s = 1.0;
    // "dataset" or the id of an earlier stage whose first output feeds this one.
    std::string input;

    bool operator==(const StageSpec&) const = default;
};

struct PipelineSpec {
    std::string name;
    std::vector<StageSpec> stages;
    std::string workdir_root = "runs";

    bool operator==(const PipelineSpec&) const = default;

    const StageSpec* find(std::string_view stage_id) const;
};

struct Violation {
    std::string stage_id;  // empty for pipeline-level violations
    std::string message;

    bool operator==(const Violation&) const = default;
};

/// Syntax, schema or invariant error in a config document.
class ConfigError : public Error {
public:
    ConfigError(std::string message, std::size_t line = 0, std::size_t column = 0,
                std::vector<Violation> violations = {});

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }
    const std::vector<Violation>& violations() const noexcept { return violations_; }

private:
    std::size_t line_;
    std::size_t column_;
    std::vector<Violation> violations_;
};

/// Parses a pipeline document, resolves defaults, and rejects specs that
/// fail validate_spec. Placeholders are kept unexpanded.
PipelineSpec parse_pipeline_spec(std::string_view text);

/// Canonical document for `spec`; every field written explicitly.
std::string serialize_pipeline_spec(const PipelineSpec& spec);

/// Checks every PipelineSpec/StageSpec invariant. Pure: no filesystem access.
std::vector<Violation> validate_spec(const PipelineSpec& spec);

/// Names of every {placeholder} in `tmpl`, in order of appearance.
std::vector<std::string> placeholders_in(std::string_view tmpl);

/// A placeholder with no binding was found during expansion.
class UnboundPlaceholder : public Error {
public:
    explicit UnboundPlaceholder(std::string name)
        : Error("placeholder {" + name + "} left unexpanded"), name_(std::move(name)) {}
    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

std::string expand(std::string_view tmpl, const std::map<std::string, std::string>& bindings);

/// File name a gathered scatter output is stored under: the template's last
/// path component with {part} replaced by "all".
std::string product_name(std::string_view output_template);

/// True for .fa/.fasta/.fna/.fq/.fastq paths (gathered record-wise).
bool is_sequence_path(std::string_view path);

}  // namespace mpipe::pipeline
