#pragma once

#include <cstddef>
#include <string>

#include "spp/family.hpp"
#include "spp/model.hpp"
#include "spp/search.hpp"

namespace spp {

// Checkpoint layout: a text manifest of key=value lines opened by the magic
// line "spp-checkpoint" and closed by "end", followed by named tensor blobs
// (u64 name length, name bytes, tensor blob). Dense models and family members
// share the format; members add mask, retained-index and provenance keys.
inline constexpr int kCheckpointVersion = 1;

void write_model_checkpoint(const TransformerWeights& model, const std::string& path);
TransformerWeights read_model_checkpoint(const std::string& path);

void write_checkpoint(const FamilyMember& member, std::size_t tokens, const std::string& path);
FamilyMember read_checkpoint(const std::string& path);

// Binary persistence for the search outputs consumed by the family stage.
void write_solution_path(const SolutionPath& path, const std::string& file);
SolutionPath read_solution_path(const std::string& file);
void write_search_state(const SearchState& state, const std::string& file);
SearchState read_search_state(const std::string& file);

}  // namespace spp
