import sys

from mpoxvlm.cli import main

sys.exit(main())
