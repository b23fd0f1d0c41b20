import sys

from temporalot.cli import main

if __name__ == '__main__':
    sys.exit(main())
