import sys

from hsep.cli import main

sys.exit(main())
