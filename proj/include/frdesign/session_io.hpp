#pragma once

#include <string>

#include "frdesign/config.hpp"
#include "frdesign/designer.hpp"

namespace frdesign {

inline constexpr int kSessionSchemaVersion = 1;

Json surface_to_json(const UtilitySurface& s);
UtilitySurface surface_from_json(const Json& j);

Json model_summary_to_json(const ModelSummary& s);
Json record_to_json(const ExperimentRecord& r);
ExperimentRecord record_from_json(const Json& j);

/// Versioned session document: config, seed, observations, records with per-model summaries,
/// and the pending proposal. Full particle dumps are added only on request.
Json session_to_json(const Session& s, bool include_particles = false);

/// Rebuilds a session by replaying its observations, then checks the replayed model
/// probabilities against the stored ones bit for bit. Throws ValidationError on mismatch
/// or on an unsupported schema version.
Session session_from_json(const Json& j);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace frdesign
