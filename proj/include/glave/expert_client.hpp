// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "glave/image.hpp"
#include "glave/jsonio.hpp"
#include "glave/tracking.hpp"

#include <Eigen/Core>

#include <map>
#include <span>
#include <string>
#include <vector>

namespace glave::expert {

/// Client for the expert adapter service (grounded detection, mask refinement,
/// frame embedding). Responses are checked against the adapter contract and
/// violations raise ValidationError.
class ExpertClient {
public:
    explicit ExpertClient(std::string base_url, int timeout_seconds = 60);

    json health();
    Eigen::VectorXf embed(const Raster& image);
    std::vector<tracking::Detection> detect(const Raster& image, std::span<const std::string> queries,
                                            double box_threshold);

    /// Sends id-bound masks per keyframe (in keyframe order) and returns the
    /// refined masks keyed by keyframe index then track id.
    std::map<int, std::map<int, tracking::MaskRLE>> track_update(const tracking::TrackMap& tracks);

private:
    json post(const std::string& path, const json& body);

    std::string base_url_;
    int timeout_seconds_;
    long embedding_dim_ = -1;
};

// Wire helpers shared by the client and tests.
json encode_image(const Raster& image);
Raster decode_image(const json& j);
json track_update_request(const tracking::TrackMap& tracks);

}  // namespace glave::expert
