import sys

from haam.cli import main

sys.exit(main())
