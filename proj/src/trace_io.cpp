#include "stitch/trace_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace stitch {

std::string format_float9(double value) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", value);
    return buf;
}

namespace {

void append_token_list(std::string& out, const std::vector<TokenId>& tokens) {
    out += '[';
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        out += std::to_string(tokens[i]);
        if (i + 1 < tokens.size()) {
            out += ',';
        }
    }
    out += ']';
}

const char* action_name(StepAction action) {
    switch (action) {
        case StepAction::Keep: return "keep";
        case StepAction::DiscardAndSwitch: return "discard_and_switch";
        case StepAction::KeepAndHandBack: return "keep_and_hand_back";
    }
    return "unknown";
}

StepAction action_from_name(const std::string& name) {
    if (name == "keep") return StepAction::Keep;
    if (name == "discard_and_switch") return StepAction::DiscardAndSwitch;
    if (name == "keep_and_hand_back") return StepAction::KeepAndHandBack;
    throw Error(ErrorCode::ParseError, "unknown step action '" + name + "'");
}

const char* router_name(RouterChoice choice) {
    return choice == RouterChoice::StaySlm ? "stay_slm" : "switch_llm";
}

TraceKind kind_from_name(const std::string& name) {
    if (name == "entropy_only") return TraceKind::EntropyOnly;
    if (name == "routed") return TraceKind::Routed;
    if (name == "slm_only") return TraceKind::SlmOnly;
    if (name == "llm_only") return TraceKind::LlmOnly;
    if (name == "specdec") return TraceKind::SpecDec;
    throw Error(ErrorCode::ParseError, "unknown trace variant '" + name + "'");
}

} // namespace

std::string trace_to_jsonl(const GenerationTrace& trace) {
    std::string out;
    out += "{\"prompt\":";
    append_token_list(out, trace.prompt);
    out += ",\"tau\":" + format_float9(trace.tau);
    out += ",\"variant\":\"" + std::string(trace_kind_name(trace.kind)) + "\"}\n";

    for (const StepRecord& step : trace.steps) {
        out += "{\"t\":" + std::to_string(step.index);
        out += ",\"role\":\"" + std::string(role_name(step.role)) + "\"";
        out += ",\"token\":" + (step.token.has_value() ? std::to_string(*step.token) : std::string("null"));
        out += ",\"entropy\":" + format_float9(step.entropy);
        out += ",\"action\":\"" + std::string(action_name(step.action)) + "\"";
        out += ",\"prefill_span\":" + std::to_string(step.prefill_span);
        out += ",\"kv_before\":" + std::to_string(step.kv_before);
        out += ",\"router\":";
        out += step.router.has_value() ? "\"" + std::string(router_name(*step.router)) + "\"" : std::string("null");
        out += "}\n";
    }

    out += "{\"output\":";
    append_token_list(out, trace.output);
    out += ",\"terminated\":\"";
    out += trace.terminated == Terminated::Eos ? "eos" : "budget";
    out += "\"}\n";
    return out;
}

GenerationTrace trace_from_jsonl(const std::string& text) {
    GenerationTrace trace;
    std::istringstream in(text);
    std::string line;
    bool saw_header = false;
    bool saw_trailer = false;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, std::string("trace JSONL: ") + e.what());
        }
        if (!saw_header) {
            trace.prompt = obj.at("prompt").get<std::vector<TokenId>>();
            trace.tau = obj.at("tau").get<double>();
            trace.kind = kind_from_name(obj.at("variant").get<std::string>());
            saw_header = true;
        } else if (obj.contains("t")) {
            StepRecord step;
            step.index = obj.at("t").get<std::size_t>();
            step.role = obj.at("role").get<std::string>() == "slm" ? ModelRole::Slm : ModelRole::Llm;
            if (!obj.at("token").is_null()) {
                step.token = obj.at("token").get<TokenId>();
            }
            step.entropy = obj.at("entropy").get<double>();
            step.action = action_from_name(obj.at("action").get<std::string>());
            step.prefill_span = obj.at("prefill_span").get<std::size_t>();
            step.kv_before = obj.at("kv_before").get<std::size_t>();
            if (!obj.at("router").is_null()) {
                step.router = obj.at("router").get<std::string>() == "stay_slm" ? RouterChoice::StaySlm
                                                                                : RouterChoice::SwitchLlm;
            }
            trace.steps.push_back(std::move(step));
        } else {
            trace.output = obj.at("output").get<std::vector<TokenId>>();
            trace.terminated = obj.at("terminated").get<std::string>() == "eos" ? Terminated::Eos
                                                                                : Terminated::Budget;
            saw_trailer = true;
        }
    }
    if (!saw_header || !saw_trailer) {
        throw Error(ErrorCode::ParseError, "trace JSONL missing header or trailer");
    }
    trace.validate();
    return trace;
}

void save_trace(const GenerationTrace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write trace file " + path);
    }
    out << trace_to_jsonl(trace);
}

GenerationTrace load_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open trace file " + path);
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return trace_from_jsonl(buffer.str());
}

} // namespace stitch
