#pragma once

#define ROUGHFLOW_VERSION "0.1.0"
