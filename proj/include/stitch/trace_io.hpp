#pragma once

#include <string>

#include "stitch/types.hpp"

namespace stitch {

// JSONL trace format: one header object {"prompt","tau","variant"}, one
// object per step with keys {"t","role","token","entropy","action",
// "prefill_span","kv_before","router"} in that order, and a trailer
// {"output","terminated"}. Floats carry 9 significant digits.
std::string trace_to_jsonl(const GenerationTrace& trace);

GenerationTrace trace_from_jsonl(const std::string& text);

void save_trace(const GenerationTrace& trace, const std::string& path);
GenerationTrace load_trace(const std::string& path);

// Formats a double with 9 significant digits, the trace float convention.
std::string format_float9(double value);

} // namespace stitch
