#pragma once

// cpp-httplib pulls in <resolv.h>, whose `_res` macro collides with Eigen
// parameter names. Include httplib through this header only.

#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#endif

#include <httplib.h>

#ifdef _res
#undef _res
#endif
