# Test package for phenopipe
