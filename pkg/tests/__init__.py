# Tests for coldloop
