"""Application entry point for SegmentMonkey."""

from cli import main

if __name__ == "__main__":
    main()
