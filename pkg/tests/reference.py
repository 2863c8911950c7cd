"""Published coverage values used as the reference for the analytic table."""

# Reference table: (height, width) -> values for n = 2..16 step 2; "g" grid, "e" entire.
REFERENCE_TABLE = {
    (224, 224): ("eeeeeeee", [100.0] * 8),
    (256, 256): ("eeeeeeee", [83.9, 90.0, 92.8, 94.4, 95.4, 96.2, 96.7, 97.1]),
    (480, 640): ("ggeeeeee", [32.7, 65.3, 53.8, 60.5, 65.3, 69.0, 71.9, 74.2]),
    (768, 1024): ("ggggeeee", [12.8, 25.5, 38.3, 51.0, 43.8, 48.8, 53.1, 56.8]),
    (720, 1280): ("ggggeeee", [10.9, 21.8, 32.7, 43.6, 39.5, 44.5, 48.8, 52.6]),
    (1080, 1920): ("gggggggg", [4.8, 9.7, 14.5, 19.4, 24.2, 29.0, 33.9, 38.7]),
    (1440, 2560): ("gggggggg", [2.7, 5.4, 8.2, 10.9, 13.6, 16.3, 19.1, 21.8]),
    (2160, 3840): ("gggggggg", [1.2, 2.4, 3.6, 4.8, 6.0, 7.3, 8.5, 9.7]),
    (2880, 5120): ("gggggggg", [0.7, 1.4, 2.0, 2.7, 3.4, 4.1, 4.8, 5.4]),
    (4320, 7680): ("gggggggg", [0.3, 0.6, 0.9, 1.2, 1.5, 1.8, 2.1, 2.4]),
}
