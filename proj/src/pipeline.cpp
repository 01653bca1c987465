#include "mpipe/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>
#include <set>

namespace mpipe::pipeline {

using nlohmann::ordered_json;

namespace {

const std::regex& placeholder_re()
{
    static const std::regex re(R"(\{([A-Za-z_][A-Za-z0-9_]*)\})");
    return re;
}

bool is_identifier(std::string_view s)
{
    if (s.empty() || !std::isalnum(static_cast<unsigned char>(s.front())))
        return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
    });
}

bool known_placeholder(std::string_view name)
{
    return std::find(std::begin(kPlaceholders), std::end(kPlaceholders), name) !=
           std::end(kPlaceholders);
}

bool mentions(std::string_view tmpl, std::string_view name)
{
    auto names = placeholders_in(tmpl);
    return std::find(names.begin(), names.end(), name) != names.end();
}

// Schema walker that reports field paths in its errors.
class Reader {
public:
    explicit Reader(std::string where) : where_(std::move(where)) {}

    void check_keys(const ordered_json& obj, std::initializer_list<std::string_view> allowed) const
    {
        if (!obj.is_object())
            fail("expected an object");
        for (const auto& [key, _] : obj.items()) {
            if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
                fail("unknown field '" + key + "'");
        }
    }

    const ordered_json& required(const ordered_json& obj, const std::string& key) const
    {
        auto it = obj.find(key);
        if (it == obj.end())
            fail("missing required field '" + key + "'");
        return *it;
    }

    std::string string_field(const ordered_json& v, const std::string& key) const
    {
        if (!v.is_string())
            fail("field '" + key + "' must be a string");
        return v.get<std::string>();
    }

    [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(where_ + ": " + msg); }

    const std::string& where() const { return where_; }

private:
    std::string where_;
};

StageSpec read_stage(const ordered_json& j, std::size_t index, const std::string& previous)
{
    Reader r("stages[" + std::to_string(index) + "]");
    r.check_keys(j, {"id", "mode", "command", "outputs", "cores", "base_time_s", "logs", "input"});

    StageSpec s;
    s.id = r.string_field(r.required(j, "id"), "id");
    auto mode = r.string_field(r.required(j, "mode"), "mode");
    if (mode == "single")
        s.mode = StageMode::Single;
    else if (mode == "scatter")
        s.mode = StageMode::Scatter;
    else
        r.fail("mode must be \"single\" or \"scatter\", got \"" + mode + "\"");
    s.command_template = r.string_field(r.required(j, "command"), "command");

    const auto& outs = r.required(j, "outputs");
    if (!outs.is_array())
        r.fail("field 'outputs' must be a list of strings");
    for (const auto& o : outs)
        s.expected_outputs.push_back(r.string_field(o, "outputs"));

    if (auto it = j.find("cores"); it != j.end()) {
        if (!it->is_number_integer())
            r.fail("field 'cores' must be an integer");
        s.cores = it->get<int>();
    }
    if (auto it = j.find("base_time_s"); it != j.end()) {
        if (!it->is_number())
            r.fail("field 'base_time_s' must be a number");
        s.base_time_s = it->get<double>();
    }
    if (auto it = j.find("logs"); it != j.end())
        s.log_glob = r.string_field(*it, "logs");
    if (auto it = j.find("input"); it != j.end())
        s.input = r.string_field(*it, "input");
    else
        s.input = previous;
    return s;
}

}  // namespace

std::string_view to_string(StageMode m)
{
    return m == StageMode::Scatter ? "scatter" : "single";
}

const StageSpec* PipelineSpec::find(std::string_view stage_id) const
{
    for (const auto& s : stages)
        if (s.id == stage_id)
            return &s;
    return nullptr;
}

ConfigError::ConfigError(std::string message, std::size_t line, std::size_t column,
                         std::vector<Violation> violations)
    : Error(line ? "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                       message
                 : message),
      line_(line), column_(column), violations_(std::move(violations))
{
}

PipelineSpec parse_pipeline_spec(std::string_view text)
{
    ordered_json doc;
    try {
        doc = ordered_json::parse(text, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        auto [line, col] = text::line_col(text, e.byte > 0 ? e.byte - 1 : 0);
        throw ConfigError("syntax error: " + std::string(e.what()), line, col);
    }

    Reader r("pipeline");
    r.check_keys(doc, {"name", "stages", "workdir_root"});
    PipelineSpec spec;
    spec.name = r.string_field(r.required(doc, "name"), "name");
    if (auto it = doc.find("workdir_root"); it != doc.end())
        spec.workdir_root = r.string_field(*it, "workdir_root");

    const auto& stages = r.required(doc, "stages");
    if (!stages.is_array())
        r.fail("field 'stages' must be a list");
    std::string previous(kDatasetInput);
    for (std::size_t i = 0; i < stages.size(); ++i) {
        spec.stages.push_back(read_stage(stages[i], i, previous));
        previous = spec.stages.back().id;
    }

    auto violations = validate_spec(spec);
    if (!violations.empty()) {
        std::string msg = "invalid pipeline:";
        for (const auto& v : violations)
            msg += "\n  " + (v.stage_id.empty() ? std::string("pipeline") : v.stage_id) + ": " +
                   v.message;
        throw ConfigError(msg, 0, 0, std::move(violations));
    }
    return spec;
}

std::string serialize_pipeline_spec(const PipelineSpec& spec)
{
    ordered_json doc;
    doc["name"] = spec.name;
    doc["workdir_root"] = spec.workdir_root;
    doc["stages"] = ordered_json::array();
    for (const auto& s : spec.stages) {
        ordered_json j;
        j["id"] = s.id;
        j["mode"] = std::string(to_string(s.mode));
        j["input"] = s.input;
        j["command"] = s.command_template;
        j["outputs"] = s.expected_outputs;
        j["logs"] = s.log_glob;
        j["cores"] = s.cores;
        j["base_time_s"] = s.base_time_s;
        doc["stages"].push_back(std::move(j));
    }
    return doc.dump(2) + "\n";
}

std::vector<Violation> validate_spec(const PipelineSpec& spec)
{
    std::vector<Violation> out;
    if (!is_identifier(spec.name))
        out.push_back({"", "pipeline name '" + spec.name + "' is not an identifier"});
    if (spec.stages.empty())
        out.push_back({"", "pipeline has no stages"});

    std::set<std::string> seen, reported_dup;
    for (const auto& s : spec.stages) {
        if (!is_identifier(s.id))
            out.push_back({s.id, "stage id '" + s.id + "' is not an identifier"});
        if (seen.count(s.id) && reported_dup.insert(s.id).second)
            out.push_back({s.id, "duplicate stage id '" + s.id + "'"});

        if (s.input == kDatasetInput) {
            // always available
        } else if (seen.count(s.input)) {
            const StageSpec* src = spec.find(s.input);
            if (s.mode == StageMode::Scatter && src && !src->expected_outputs.empty() &&
                !is_sequence_path(src->expected_outputs.front()))
                out.push_back({s.id, "scatter input '" + s.input +
                                         "' does not produce a sequence file"});
        } else if (spec.find(s.input)) {
            out.push_back({s.id, "input references later stage '" + s.input + "'"});
        } else {
            out.push_back({s.id, "input references unknown stage '" + s.input + "'"});
        }
        seen.insert(s.id);

        if (s.cores < 1)
            out.push_back({s.id, "cores must be >= 1"});
        if (!(s.base_time_s >= 0.0) || !std::isfinite(s.base_time_s))
            out.push_back({s.id, "base_time_s must be a finite number >= 0"});
        if (s.command_template.empty())
            out.push_back({s.id, "command is empty"});
        if (s.expected_outputs.empty())
            out.push_back({s.id, "outputs list is empty"});

        auto check_template = [&](std::string_view what, std::string_view tmpl) {
            for (const auto& name : placeholders_in(tmpl)) {
                if (!known_placeholder(name))
                    out.push_back({s.id, std::string(what) + " uses unknown placeholder {" +
                                             name + "}"});
            }
        };
        check_template("command", s.command_template);
        check_template("logs", s.log_glob);
        std::set<std::string> products;
        for (const auto& o : s.expected_outputs) {
            check_template("output", o);
            if (mentions(o, "output"))
                out.push_back({s.id, "output '" + o + "' refers to {output}"});
            if (!products.insert(product_name(o)).second)
                out.push_back({s.id, "outputs collide on file name '" + product_name(o) + "'"});
        }

        if (s.mode == StageMode::Scatter) {
            if (!mentions(s.command_template, "part"))
                out.push_back({s.id, "scatter command does not name {part}"});
            for (const auto& o : s.expected_outputs)
                if (!mentions(o, "part") && !mentions(o, "workdir"))
                    out.push_back({s.id, "scatter output '" + o +
                                             "' names neither {part} nor {workdir}"});
        } else {
            if (mentions(s.command_template, "part"))
                out.push_back({s.id, "single stage command names {part}"});
            for (const auto& o : s.expected_outputs)
                if (mentions(o, "part"))
                    out.push_back({s.id, "single stage output '" + o + "' names {part}"});
        }
    }
    return out;
}

std::vector<std::string> placeholders_in(std::string_view tmpl)
{
    std::vector<std::string> names;
    std::string s(tmpl);
    for (std::sregex_iterator it(s.begin(), s.end(), placeholder_re()), end; it != end; ++it)
        names.push_back((*it)[1].str());
    return names;
}

std::string expand(std::string_view tmpl, const std::map<std::string, std::string>& bindings)
{
    std::string s(tmpl), out;
    std::size_t last = 0;
    for (std::sregex_iterator it(s.begin(), s.end(), placeholder_re()), end; it != end; ++it) {
        const auto& m = *it;
        out.append(s, last, static_cast<std::size_t>(m.position()) - last);
        auto b = bindings.find(m[1].str());
        if (b == bindings.end())
            throw UnboundPlaceholder(m[1].str());
        out += b->second;
        last = static_cast<std::size_t>(m.position() + m.length());
    }
    out.append(s, last);
    return out;
}

std::string product_name(std::string_view output_template)
{
    auto slash = output_template.find_last_of('/');
    std::string name(slash == std::string_view::npos ? output_template
                                                     : output_template.substr(slash + 1));
    for (auto pos = name.find("{part}"); pos != std::string::npos; pos = name.find("{part}"))
        name.replace(pos, 6, "all");
    return name;
}

bool is_sequence_path(std::string_view path)
{
    for (std::string_view ext : {".fa", ".fasta", ".fna", ".fq", ".fastq"}) {
        if (path.size() >= ext.size() && path.substr(path.size() - ext.size()) == ext)
            return true;
    }
    return false;
}

}  // namespace mpipe::pipeline
