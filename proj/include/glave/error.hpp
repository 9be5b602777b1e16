// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace glave {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define GLAVE_DEFINE_ERROR(Name)               \
    class Name : public Error {                \
    public:                                    \
        using Error::Error;                    \
    }

GLAVE_DEFINE_ERROR(DegenerateInputError);
GLAVE_DEFINE_ERROR(EmptyInputError);
GLAVE_DEFINE_ERROR(DimensionError);
GLAVE_DEFINE_ERROR(GeometryError);
GLAVE_DEFINE_ERROR(FormatError);
GLAVE_DEFINE_ERROR(TransportError);
GLAVE_DEFINE_ERROR(ParseError);
GLAVE_DEFINE_ERROR(ValidationError);
GLAVE_DEFINE_ERROR(PreconditionError);
GLAVE_DEFINE_ERROR(StageError);
GLAVE_DEFINE_ERROR(AssemblyError);
GLAVE_DEFINE_ERROR(ConfigError);
GLAVE_DEFINE_ERROR(ReportError);

#undef GLAVE_DEFINE_ERROR

/// Replay transport found no fixture for a request. Carries the cache key so
/// callers can name the missing fixture.
class FixtureMissingError : public Error {
public:
    explicit FixtureMissingError(std::string key, const std::string& tag = {})
        : Error("fixture missing for cache key " + key + (tag.empty() ? "" : " (" + tag + ")")), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

}  // namespace glave
