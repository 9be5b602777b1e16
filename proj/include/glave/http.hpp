// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <httplib.h>

// <resolv.h>, pulled in by httplib, defines `_res`, which collides with
// parameter names inside Eigen.
#ifdef _res
#undef _res
#endif
