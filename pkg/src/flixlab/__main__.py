import sys

from flixlab.cli import main

sys.exit(main())
