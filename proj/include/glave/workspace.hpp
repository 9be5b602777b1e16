// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "glave/config.hpp"
#include "glave/expert_client.hpp"
#include "glave/keyframing.hpp"
#include "glave/marking.hpp"
#include "glave/pipeline.hpp"
#include "glave/tracking.hpp"

#include <filesystem>
#include <map>
#include <vector>

// Per-video workspace stages that run before captioning:
//   frames/ + frames.json  -> shots.json, keyframes.json
//   detections/{kf}.json   -> tracks.json
//   keyframes + tracks     -> marked/{kf}.png, marks.json
namespace glave::workspace {

/// round(2 s * fps) with fps estimated from frames.json timestamps, unless
/// the config pins keyframe_max_gap.
int keyframe_max_gap(const RunConfig& config, std::span<const keyframing::FrameInfo> frames);

/// Shot detection plus keyframe selection. Embeddings come from
/// embeddings.json, or from the adapter when one is given and the file is absent.
keyframing::KeyframeIndex prepare_keyframes(const std::filesystem::path& ws, const RunConfig& config,
                                            expert::ExpertClient* adapter = nullptr);

/// Id assignment over detections/{kf}.json in keyframe order. Missing
/// detection files mean "no objects", unless an adapter is given.
tracking::TrackMap prepare_tracks(const std::filesystem::path& ws, const RunConfig& config,
                                  expert::ExpertClient* adapter = nullptr);

std::map<int, std::vector<marking::MarkEntry>> prepare_marks(const std::filesystem::path& ws);

/// Runs whichever of the three stages has no artifact yet.
void ensure_prepared(const std::filesystem::path& ws, const RunConfig& config,
                     expert::ExpertClient* adapter = nullptr);

/// Keyframe n (1-based) -> source frame index.
std::vector<int> keyframe_frames(const std::filesystem::path& ws);

std::vector<caption::KeyframeView> load_keyframe_views(const std::filesystem::path& ws);

}  // namespace glave::workspace
