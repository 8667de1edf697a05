# Test package for ranger
